//! `model.bin` and `masks.bin`.
//!
//! `model.bin`: u32 record count, then per parameter a u16 name length, the
//! UTF-8 name (`<layer>.weight` / `<layer>.bias`) and one `STNS` tensor
//! record in f64 (f32 under the `f32` feature).
//!
//! `masks.bin`: magic `SMSK`, version byte 1, u32 layer count, then per layer
//! a u16 name length, the name, u8 ndim, ndim u32 dims, u64 nonzero count and
//! the mask bits packed LSB-first into `⌈d/8⌉` bytes. All integers are
//! little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::{read_tensor, write_tensor, Dtype};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sparsity::{LayerMask, MaskSet};

pub const MASK_MAGIC: &[u8; 4] = b"SMSK";
const MASK_VERSION: u8 = 1;

#[cfg(not(feature = "f32"))]
const PARAM_DTYPE: Dtype = Dtype::F64;
#[cfg(feature = "f32")]
const PARAM_DTYPE: Dtype = Dtype::F32;

fn invalid(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

fn write_name(out: &mut Vec<u8>, name: &str) -> std::io::Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| invalid("name too long"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_name(r: &mut impl Read) -> std::io::Result<String> {
    let len = u16::from_le_bytes(read_exact(r)?) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| invalid("name is not UTF-8"))
}

pub fn encode_masks(masks: &MaskSet) -> std::io::Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MASK_MAGIC);
    out.push(MASK_VERSION);
    out.extend_from_slice(&(masks.len() as u32).to_le_bytes());
    for m in masks.iter() {
        write_name(&mut out, m.name())?;
        out.push(u8::try_from(m.dims().len()).map_err(|_| invalid("too many dims"))?);
        for &d in m.dims() {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| invalid("dim exceeds u32"))?.to_le_bytes());
        }
        out.extend_from_slice(&(m.nonzero_count() as u64).to_le_bytes());
        let mut packed = vec![0u8; m.len().div_ceil(8)];
        for i in (0..m.len()).filter(|&i| m.get(i)) {
            packed[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&packed);
    }
    Ok(out)
}

pub fn decode_masks(mut r: &[u8]) -> std::io::Result<MaskSet> {
    let r = &mut r;
    if &read_exact::<4>(r)? != MASK_MAGIC {
        return Err(invalid("bad mask magic"));
    }
    if read_exact::<1>(r)?[0] != MASK_VERSION {
        return Err(invalid("unsupported mask version"));
    }
    let count = u32::from_le_bytes(read_exact(r)?) as usize;
    let mut masks = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = read_name(r)?;
        let ndim = read_exact::<1>(r)?[0] as usize;
        let dims: Vec<usize> = (0..ndim)
            .map(|_| read_exact(r).map(|b| u32::from_le_bytes(b) as usize))
            .collect::<std::io::Result<_>>()?;
        let nnz = u64::from_le_bytes(read_exact(r)?) as usize;
        let len: usize = dims.iter().product();
        let mut packed = vec![0u8; len.div_ceil(8)];
        r.read_exact(&mut packed)?;
        let bits: Vec<u8> = (0..len).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect();
        if len % 8 != 0 && packed.last().is_some_and(|&b| b >> (len % 8) != 0) {
            return Err(invalid("padding bits set"));
        }
        let mask = LayerMask::from_bits(name, &dims, bits).map_err(|e| invalid(e.to_string()))?;
        if mask.nonzero_count() != nnz {
            return Err(invalid(format!("layer {} declares {nnz} nonzeros", mask.name())));
        }
        masks.push(mask);
    }
    if !r.is_empty() {
        return Err(invalid("trailing bytes after masks"));
    }
    Ok(MaskSet::new(masks))
}

pub fn save_masks(path: impl AsRef<Path>, masks: &MaskSet) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_masks(masks).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_masks(path: impl AsRef<Path>) -> Result<MaskSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_masks(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_model(model: &Model) -> std::io::Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&(2 * model.layers().len() as u32).to_le_bytes());
    for (spec, layer) in model.layer_shapes().iter().zip(model.layers()) {
        for (suffix, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
            write_name(&mut out, &format!("{}.{suffix}", spec.name))?;
            write_tensor(&mut out, t, PARAM_DTYPE)?;
        }
    }
    Ok(out)
}

/// Loads parameters into `model`, whose architecture must match the file.
pub fn decode_model_into(model: &mut Model, mut r: &[u8]) -> std::io::Result<()> {
    let r = &mut r;
    let count = u32::from_le_bytes(read_exact(r)?) as usize;
    if count != 2 * model.layers().len() {
        return Err(invalid(format!("{count} records for {} layers", model.layers().len())));
    }
    let names: Vec<String> = model.layer_shapes().iter().map(|l| l.name.clone()).collect();
    for (name, layer) in names.iter().zip(model.layers_mut()) {
        for (suffix, slot) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
            let got = read_name(r)?;
            let want = format!("{name}.{suffix}");
            if got != want {
                return Err(invalid(format!("expected {want}, found {got}")));
            }
            let (t, _) = read_tensor(r)?;
            if t.dims() != slot.dims() {
                return Err(invalid(format!("{want} has dims {:?}, expected {:?}", t.dims(), slot.dims())));
            }
            *slot = t;
        }
    }
    if !r.is_empty() {
        return Err(invalid("trailing bytes after model"));
    }
    Ok(())
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model).map_err(|e| Error::format(path, e.to_string()))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model_into(path: impl AsRef<Path>, model: &mut Model) -> Result<()> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model_into(model, &bytes).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_miniconvnet;

    #[test]
    fn masks_round_trip_bytes() {
        let mut a = LayerMask::zeros("conv1", &[2, 1, 3, 3]);
        [0, 5, 17].iter().for_each(|&i| a.set(i, true));
        let b = LayerMask::ones("fc", &[3, 5]);
        let masks = MaskSet::new(vec![a, b]);
        let bytes = encode_masks(&masks).unwrap();
        assert_eq!(&bytes[..4], b"SMSK");
        let back = decode_masks(&bytes).unwrap();
        assert_eq!(back, masks);
        assert_eq!(encode_masks(&back).unwrap(), bytes);
    }

    #[test]
    fn mask_nonzero_count_is_checked() {
        let masks = MaskSet::new(vec![LayerMask::ones("a", &[4])]);
        let mut bytes = encode_masks(&masks).unwrap();
        let at = 4 + 1 + 4 + 2 + 1 + 1 + 4;
        bytes[at] = 3;
        assert!(decode_masks(&bytes).is_err());
    }

    #[test]
    fn model_round_trip() {
        let m = build_miniconvnet([1, 8, 8], &[4], 3, 2, 1).unwrap();
        let bytes = encode_model(&m).unwrap();
        let mut other = build_miniconvnet([1, 8, 8], &[4], 3, 2, 2).unwrap();
        assert_ne!(other, m);
        decode_model_into(&mut other, &bytes).unwrap();
        assert_eq!(other, m);
        let mut wrong = build_miniconvnet([1, 8, 8], &[5], 3, 2, 2).unwrap();
        assert!(decode_model_into(&mut wrong, &bytes).is_err());
    }
}
