use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Noise std per severity 1..=6.
pub const GAUSSIAN_SIGMA: [Float; 6] = [0.04, 0.08, 0.12, 0.18, 0.26, 0.38];
/// Fraction of values replaced by 0 or 1 per severity.
pub const IMPULSE_FRACTION: [Float; 6] = [0.01, 0.02, 0.03, 0.05, 0.07, 0.10];
/// Disk radius in pixels per severity.
pub const DEFOCUS_RADIUS: [usize; 6] = [1, 1, 2, 3, 4, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ImpulseNoise,
    DefocusBlur,
}

impl CorruptionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian_noise" => Some(CorruptionKind::GaussianNoise),
            "impulse_noise" => Some(CorruptionKind::ImpulseNoise),
            "defocus_blur" => Some(CorruptionKind::DefocusBlur),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.severity) {
            return Err(Error::input(format!("severity {} outside 1..=6", self.severity)));
        }
        Ok(())
    }

    fn level(&self) -> usize {
        self.severity as usize - 1
    }
}

/// Normalized binary disk `{(dy, dx) : dy² + dx² ≤ r²}` of side `2r + 1`.
pub fn defocus_kernel(radius: usize) -> Vec<Float> {
    let side = 2 * radius + 1;
    let r = radius as isize;
    let mut k: Vec<Float> = (0..side * side)
        .map(|i| {
            let (dy, dx) = ((i / side) as isize - r, (i % side) as isize - r);
            if dy * dy + dx * dx <= r * r {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let total: Float = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Mirror index without repeating the edge sample, as in `numpy.pad(mode="reflect")`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn blur(img: &[Float], out: &mut [Float], c: usize, h: usize, w: usize, radius: usize) {
    let k = defocus_kernel(radius);
    let side = 2 * radius + 1;
    let r = radius as isize;
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..side {
                    let sy = reflect(y as isize + ky as isize - r, h);
                    for kx in 0..side {
                        let wgt = k[ky * side + kx];
                        if wgt != 0.0 {
                            acc += wgt * plane[sy * w + reflect(x as isize + kx as isize - r, w)];
                        }
                    }
                }
                out[(ch * h + y) * w + x] = acc.clamp(0.0, 1.0);
            }
        }
    }
}

/// Applies the corruption to every image. Sample `i` uses RNG stream `i`
/// of `spec.seed`, so results do not depend on how samples are partitioned.
/// Labels are untouched; values are rounded to f32.
pub fn corrupt(data: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    spec.validate()?;
    let dims = data.sample_dims();
    if dims.len() != 3 {
        return Err(Error::dim("corruptions need [N, C, H, W] images"));
    }
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let len = data.sample_len();
    let mut out = vec![0.0; data.images().len()];
    for i in 0..data.len() {
        let src = data.image(i);
        let dst = &mut out[i * len..(i + 1) * len];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        match spec.kind {
            CorruptionKind::GaussianNoise => {
                let sigma = GAUSSIAN_SIGMA[spec.level()];
                for (d, &s) in dst.iter_mut().zip(src) {
                    let e: f64 = rng.sample(StandardNormal);
                    *d = (s + sigma * e as Float).clamp(0.0, 1.0);
                }
            }
            CorruptionKind::ImpulseNoise => {
                let p = IMPULSE_FRACTION[spec.level()] as f64;
                for (d, &s) in dst.iter_mut().zip(src) {
                    let hit = rng.random::<f64>() < p;
                    let salt = rng.random::<bool>();
                    *d = match (hit, salt) {
                        (false, _) => s,
                        (true, true) => 1.0,
                        (true, false) => 0.0,
                    };
                }
            }
            CorruptionKind::DefocusBlur => blur(src, dst, c, h, w, DEFOCUS_RADIUS[spec.level()]),
        }
        super::quantize_f32(dst);
    }
    data.with_images(Tensor::new(data.images().dims().to_vec(), out)?)
}
