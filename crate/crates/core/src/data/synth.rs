use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Class-conditional Gaussian-blob images.
///
/// Each class owns `blobs` Gaussian bumps with fixed centres, widths and
/// per-channel amplitudes. A sample renders its class prototype with jittered
/// centres, blends in a random other class with weight `u ~ U(0, overlap)`,
/// and adds pixel noise. Samples with large `u` are intrinsically hard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    /// `[C, H, W]`.
    pub dims: Vec<usize>,
    pub blobs: usize,
    pub overlap: Float,
    /// Std of blob-centre displacement, in pixels.
    pub jitter: Float,
    /// Std of additive pixel noise.
    pub noise: Float,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 10,
            per_class: 800,
            dims: vec![1, 8, 8],
            blobs: 3,
            overlap: 0.6,
            jitter: 0.5,
            noise: 0.08,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::input("classes must be in 2..=256"));
        }
        if self.per_class == 0 {
            return Err(Error::input("per_class must be positive"));
        }
        if self.dims.len() != 3 || self.dims.contains(&0) {
            return Err(Error::input("dims must be [C, H, W] with positive entries"));
        }
        if self.blobs == 0 {
            return Err(Error::input("blobs must be positive"));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::input("overlap must be in [0, 1]"));
        }
        if !(self.jitter >= 0.0 && self.noise >= 0.0) {
            return Err(Error::input("jitter and noise must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Blob {
    cy: f64,
    cx: f64,
    sigma: f64,
    amp: Vec<f64>,
}

const BACKGROUND: f64 = 0.1;

fn prototypes(spec: &SynthSpec, seed: u64) -> Vec<Vec<Blob>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (spec.dims[0], spec.dims[1] as f64, spec.dims[2] as f64);
    (0..spec.classes)
        .map(|_| {
            (0..spec.blobs)
                .map(|_| Blob {
                    cy: rng.random_range(0.0..h),
                    cx: rng.random_range(0.0..w),
                    sigma: rng.random_range(0.7..1.6) * (h.min(w) / 8.0),
                    amp: (0..c).map(|_| rng.random_range(0.4..0.9)).collect(),
                })
                .collect()
        })
        .collect()
}

fn render(blobs: &[Blob], shift: &[(f64, f64)], dims: &[usize], out: &mut [f64], weight: f64) {
    let (h, w) = (dims[1], dims[2]);
    for (b, &(dy, dx)) in blobs.iter().zip(shift) {
        let inv = 1.0 / (2.0 * b.sigma * b.sigma);
        for (ch, &a) in b.amp.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let (ry, rx) = (y as f64 - b.cy - dy, x as f64 - b.cx - dx);
                    out[(ch * h + y) * w + x] += weight * a * (-(ry * ry + rx * rx) * inv).exp();
                }
            }
        }
    }
}

/// Rounds every value to the nearest f32 so f32 tensor files round-trip exactly.
pub fn quantize_f32(values: &mut [Float]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as Float);
}

/// Draws one split. Prototypes depend only on `seed`, so train and test
/// splits generated with the same seed share classes. Sample `i` has class
/// `i % classes` and its own RNG stream.
pub fn make_synthetic(spec: &SynthSpec, split: Split, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let protos = prototypes(spec, seed);
    let n = spec.classes * spec.per_class;
    let len: usize = spec.dims.iter().product();
    let base = match split {
        Split::Train => 1u64,
        Split::Test => 1u64 << 40,
    };
    let mut data = Vec::with_capacity(n * len);
    let mut labels = Vec::with_capacity(n);
    let mut img = vec![0.0f64; len];
    for i in 0..n {
        let class = i % spec.classes;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(base + i as u64);
        let u = if spec.overlap > 0.0 {
            rng.random_range(0.0..spec.overlap as f64)
        } else {
            0.0
        };
        let other = (class + rng.random_range(1..spec.classes)) % spec.classes;
        let jitter = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
            (0..spec.blobs)
                .map(|_| {
                    let dy: f64 = rng.sample(StandardNormal);
                    let dx: f64 = rng.sample(StandardNormal);
                    (dy * spec.jitter as f64, dx * spec.jitter as f64)
                })
                .collect()
        };
        let own = jitter(&mut rng);
        let mix = jitter(&mut rng);
        img.iter_mut().for_each(|v| *v = BACKGROUND);
        render(&protos[class], &own, &spec.dims, &mut img, 1.0 - u);
        if u > 0.0 {
            render(&protos[other], &mix, &spec.dims, &mut img, u);
        }
        for v in img.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + spec.noise as f64 * e).clamp(0.0, 1.0);
            data.push(*v as f32 as Float);
        }
        labels.push(class);
    }
    let mut dims = vec![n];
    dims.extend_from_slice(&spec.dims);
    Dataset::new(Tensor::new(dims, data)?, labels, spec.classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            classes: 3,
            per_class: 4,
            dims: vec![2, 6, 6],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn shapes_labels_and_range() {
        let d = make_synthetic(&small(), Split::Train, 3).unwrap();
        assert_eq!(d.images().dims(), &[12, 2, 6, 6]);
        assert_eq!(d.class_counts(), vec![4, 4, 4]);
        assert!(d.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deterministic_and_split_dependent() {
        let a = make_synthetic(&small(), Split::Train, 3).unwrap();
        let b = make_synthetic(&small(), Split::Train, 3).unwrap();
        let t = make_synthetic(&small(), Split::Test, 3).unwrap();
        let c = make_synthetic(&small(), Split::Train, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.images(), t.images());
        assert_ne!(a.images(), c.images());
    }

    #[test]
    fn values_are_f32_exact() {
        let d = make_synthetic(&small(), Split::Test, 9).unwrap();
        assert!(d.images().data().iter().all(|&v| v as f32 as Float == v));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small();
        s.overlap = 1.5;
        assert!(make_synthetic(&s, Split::Train, 0).is_err());
        let mut s = small();
        s.dims = vec![8, 8];
        assert!(make_synthetic(&s, Split::Train, 0).is_err());
    }
}
