//! `STNS` tensor container.
//!
//! Layout: magic `STNS`, version byte 1, dtype byte, ndim byte, `ndim`
//! little-endian u32 dims, then the row-major payload in little-endian order.
//! Dtypes: 0 = f32, 1 = u8, 2 = f64 (model checkpoints).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const MAGIC: &[u8; 4] = b"STNS";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    U8 = 1,
    F64 = 2,
}

impl Dtype {
    fn from_byte(b: u8) -> Option<Dtype> {
        match b {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::U8),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
            Dtype::F64 => 8,
        }
    }
}

/// Serializes `t` as `dtype`. U8 requires integral values in `0..=255`.
pub fn write_tensor(out: &mut impl Write, t: &Tensor, dtype: Dtype) -> std::io::Result<()> {
    if t.ndim() > u8::MAX as usize {
        return Err(invalid("too many dimensions"));
    }
    let mut buf = Vec::with_capacity(7 + 4 * t.ndim() + dtype.size() * t.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(dtype as u8);
    buf.push(t.ndim() as u8);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| invalid("dimension exceeds u32"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        Dtype::F32 => t
            .data()
            .iter()
            .for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => t
            .data()
            .iter()
            .for_each(|&v| buf.extend_from_slice(&(v as f64).to_le_bytes())),
        Dtype::U8 => {
            for &v in t.data() {
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(invalid("u8 tensor holds a non-byte value"));
                }
                buf.push(v as u8);
            }
        }
    }
    out.write_all(&buf)
}

/// Reads one tensor record, returning it with its stored dtype.
pub fn read_tensor(input: &mut impl Read) -> std::io::Result<(Tensor, Dtype)> {
    let mut head = [0u8; 7];
    input.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(invalid("bad magic"));
    }
    if head[4] != VERSION {
        return Err(invalid("unsupported version"));
    }
    let dtype = Dtype::from_byte(head[5]).ok_or_else(|| invalid("unknown dtype"))?;
    let ndim = head[6] as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut d = [0u8; 4];
        input.read_exact(&mut d)?;
        dims.push(u32::from_le_bytes(d) as usize);
    }
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| invalid("element count overflows"))?;
    let mut payload = vec![0u8; n.checked_mul(dtype.size()).ok_or_else(|| invalid("payload overflows"))?];
    input.read_exact(&mut payload)?;
    let data: Vec<Float> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Float)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Float)
            .collect(),
        Dtype::U8 => payload.iter().map(|&b| b as Float).collect(),
    };
    let t = Tensor::new(dims, data).map_err(|e| invalid(&e.to_string()))?;
    Ok((t, dtype))
}

fn invalid(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string())
}

/// Maps an io error to the crate error, separating malformed content from IO failure.
pub(crate) fn classify(path: &Path, e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::InvalidData | std::io::ErrorKind::UnexpectedEof => {
            Error::format(path, e.to_string())
        }
        _ => Error::io(path, e),
    }
}

pub fn save_tensor_file(path: impl AsRef<Path>, t: &Tensor, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_tensor(&mut w, t, dtype)
        .and_then(|_| w.flush())
        .map_err(|e| classify(path, e))
}

pub fn load_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let (t, _) = read_tensor(&mut r).map_err(|e| classify(path, e))?;
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok(t),
        Ok(_) => Err(Error::format(path, "trailing bytes after tensor")),
        Err(e) => Err(Error::io(path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_for_2x3_f32() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::F32).unwrap();
        assert_eq!(&buf[..4], b"STNS");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 0);
        assert_eq!(buf[6], 2);
        assert_eq!(&buf[7..11], &2u32.to_le_bytes());
        assert_eq!(&buf[11..15], &3u32.to_le_bytes());
        assert_eq!(buf.len(), 15 + 6 * 4);
        assert_eq!(&buf[15 + 4..15 + 8], &1.0f32.to_le_bytes());
    }

    #[test]
    fn round_trips_each_dtype() {
        let f = Tensor::new(vec![3], vec![0.25, -1.5, 3.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![0.0, 7.0, 255.0, 1.0]).unwrap();
        for (t, d) in [(&f, Dtype::F32), (&f, Dtype::F64), (&b, Dtype::U8)] {
            let mut buf = Vec::new();
            write_tensor(&mut buf, t, d).unwrap();
            let (back, dt) = read_tensor(&mut buf.as_slice()).unwrap();
            assert_eq!(dt, d);
            assert_eq!(&back, t);
        }
    }

    #[test]
    fn u8_rejects_fractions() {
        let t = Tensor::new(vec![1], vec![0.5]).unwrap();
        assert!(write_tensor(&mut Vec::new(), &t, Dtype::U8).is_err());
    }

    #[test]
    fn rejects_corrupt_headers() {
        let t = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::F32).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensor(&mut bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[5] = 9;
        assert!(read_tensor(&mut bad.as_slice()).is_err());
        assert!(read_tensor(&mut &buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn file_errors_are_classified() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.stns");
        assert_eq!(load_tensor_file(&missing).unwrap_err().exit_code(), 4);
        let junk = dir.path().join("junk.stns");
        std::fs::write(&junk, b"nope").unwrap();
        assert!(matches!(load_tensor_file(&junk), Err(Error::Format { .. })));
    }
}
