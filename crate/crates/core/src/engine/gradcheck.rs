//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::Model;
use crate::sparsity::MaskSet;
use crate::tensor::{Float, Tensor};

/// Denominator floor for relative errors so that exact zeros compare sanely.
pub const REL_ERR_FLOOR: Float = 1e-6;

pub fn relative_error(analytic: Float, numeric: Float) -> Float {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: Float,
    /// Masked weight positions whose analytic gradient was not exactly zero.
    pub masked_nonzero: usize,
    pub masked_checked: usize,
    pub tolerance: Float,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance && self.masked_nonzero == 0
    }
}

/// Central difference `(f(x+h) − f(x−h)) / 2h` at coordinate `i`.
pub fn central_difference(
    mut f: impl FnMut(&[Float]) -> Result<Float>,
    x: &[Float],
    i: usize,
    h: Float,
) -> Result<Float> {
    let mut probe = x.to_vec();
    probe[i] = x[i] + h;
    let up = f(&probe)?;
    probe[i] = x[i] - h;
    let down = f(&probe)?;
    Ok((up - down) / (2.0 * h))
}

/// Compares analytic parameter gradients of the mean cross-entropy on one
/// batch against central differences at `samples` randomly chosen parameter
/// elements (weights and biases pooled). Every masked weight's analytic
/// gradient is also checked for exact zero.
pub fn gradient_check(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    masks: Option<&MaskSet>,
    tolerance: Float,
    samples: usize,
    h: Float,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grads(x.clone(), labels, masks)?;

    // Flat index space: for each layer, weights then bias.
    let mut slots = Vec::new();
    for (l, layer) in model.layers().iter().enumerate() {
        for i in 0..layer.weight.len() {
            slots.push((l, false, i));
        }
        for i in 0..layer.bias.len() {
            slots.push((l, true, i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, slots.len(), samples.min(slots.len()));

    let mut probe = model.clone();
    let mut max_rel: Float = 0.0;
    for p in picks.iter() {
        let (l, is_bias, i) = slots[p];
        let analytic = if is_bias {
            grads.biases[l][i]
        } else {
            grads.weights[l][i]
        };
        fn read(m: &mut Model, l: usize, is_bias: bool, i: usize) -> &mut Float {
            let layer = &mut m.layers_mut()[l];
            if is_bias {
                &mut layer.bias.data_mut()[i]
            } else {
                &mut layer.weight.data_mut()[i]
            }
        }
        let orig = *read(&mut probe, l, is_bias, i);
        *read(&mut probe, l, is_bias, i) = orig + h;
        let up = probe.loss_and_grads(x.clone(), labels, masks)?.0;
        *read(&mut probe, l, is_bias, i) = orig - h;
        let down = probe.loss_and_grads(x.clone(), labels, masks)?.0;
        *read(&mut probe, l, is_bias, i) = orig;
        let numeric = (up - down) / (2.0 * h);
        max_rel = max_rel.max(relative_error(analytic, numeric));
    }

    let mut masked_nonzero = 0;
    let mut masked_checked = 0;
    if let Some(masks) = masks {
        for (m, g) in masks.iter().zip(&grads.weights) {
            for (&bit, &gv) in m.bits().iter().zip(g) {
                if bit == 0 {
                    masked_checked += 1;
                    if gv != 0.0 {
                        masked_nonzero += 1;
                    }
                }
            }
        }
    }
    Ok(GradCheckReport {
        checked: picks.len(),
        max_rel_error: max_rel,
        masked_nonzero,
        masked_checked,
        tolerance,
    })
}
