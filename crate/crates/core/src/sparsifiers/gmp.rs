use serde::{Deserialize, Serialize};

use super::{HookContext, Sparsifier};
use crate::error::{Error, Result};
use crate::sparsity::{global_top_k_mask, keep_count};
use crate::tensor::Float;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmpOptions {
    pub start_frac: Float,
    pub end_frac: Float,
    /// Epochs between pruning events.
    pub interval: usize,
}

impl Default for GmpOptions {
    fn default() -> Self {
        GmpOptions {
            start_frac: 0.1,
            end_frac: 0.8,
            interval: 4,
        }
    }
}

/// `(t0, t1) = (round(start·E), round(end·E))`, with `t1` pulled into the
/// last epoch so the final event always fires.
pub fn gmp_endpoints(epochs: usize, opts: &GmpOptions) -> (usize, usize) {
    let last = epochs.saturating_sub(1);
    let t0 = ((opts.start_frac * epochs as Float).round() as usize).min(last);
    let t1 = ((opts.end_frac * epochs as Float).round() as usize).clamp(t0, last);
    (t0, t1)
}

/// Cubic ramp `s·(1 − (1 − (t − t0)/(t1 − t0))³)`, 0 before `t0`, `s` from `t1` on.
pub fn gmp_sparsity(t: usize, t0: usize, t1: usize, target: Float) -> Float {
    if t < t0 {
        0.0
    } else if t >= t1 {
        target
    } else {
        let progress = (t - t0) as Float / (t1 - t0) as Float;
        target * (1.0 - (1.0 - progress).powi(3))
    }
}

/// Gradual magnitude pruning. At each event epoch the global top-k of |w|
/// is taken among still-active weights, so pruned weights stay pruned.
#[derive(Debug, Clone)]
pub struct Gmp {
    target: Float,
    opts: GmpOptions,
    /// `(epoch, scheduled sparsity)` for every event that ran.
    pub events: Vec<(usize, Float)>,
}

impl Gmp {
    pub fn new(target: Float, opts: GmpOptions) -> Result<Self> {
        if !(0.0..1.0).contains(&target) {
            return Err(Error::input("sparsity must lie in [0, 1)"));
        }
        if opts.interval == 0 || !(0.0..=opts.end_frac).contains(&opts.start_frac) || opts.end_frac > 1.0 {
            return Err(Error::input("gmp needs interval > 0 and 0 ≤ start ≤ end ≤ 1"));
        }
        Ok(Gmp {
            target,
            opts,
            events: Vec::new(),
        })
    }

    pub fn is_event(&self, epoch: usize, epochs: usize) -> bool {
        let (t0, t1) = gmp_endpoints(epochs, &self.opts);
        (t0..=t1).contains(&epoch) && ((epoch - t0) % self.opts.interval == 0 || epoch == t1)
    }
}

impl Sparsifier for Gmp {
    fn name(&self) -> &'static str {
        "gmp"
    }

    fn on_epoch_start(&mut self, epoch: usize, ctx: &mut HookContext) -> Result<()> {
        if !self.is_event(epoch, ctx.epochs) {
            return Ok(());
        }
        let (t0, t1) = gmp_endpoints(ctx.epochs, &self.opts);
        let s_t = gmp_sparsity(epoch, t0, t1, self.target);
        self.events.push((epoch, s_t));
        let k = keep_count(ctx.masks.total_params(), s_t);
        if k >= ctx.masks.nonzero_count() {
            return Ok(());
        }
        let mags: Vec<Vec<Float>> = ctx
            .model
            .weight_slices()
            .iter()
            .map(|w| w.iter().map(|v| v.abs()).collect())
            .collect();
        let views: Vec<&[Float]> = mags.iter().map(Vec::as_slice).collect();
        let next = global_top_k_mask(ctx.masks, &views, k, Some(ctx.masks))?;
        *ctx.masks = next;
        ctx.model.apply_masks(ctx.masks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        assert_eq!(gmp_sparsity(32, 4, 32, 0.9), 0.9);
        assert_eq!(gmp_sparsity(3, 4, 32, 0.9), 0.0);
        assert_eq!(gmp_sparsity(4, 4, 32, 0.9), 0.0);
        assert!((gmp_sparsity(18, 4, 32, 0.9) - 0.7875).abs() < 1e-12);
    }

    #[test]
    fn endpoints_for_default_recipe() {
        let o = GmpOptions::default();
        assert_eq!(gmp_endpoints(40, &o), (4, 32));
        assert_eq!(gmp_endpoints(200, &o), (20, 160));
        assert_eq!(gmp_endpoints(1, &o), (0, 0));
        let g = Gmp::new(0.5, o).unwrap();
        let ev: Vec<usize> = (0..40).filter(|&e| g.is_event(e, 40)).collect();
        assert_eq!(ev, vec![4, 8, 12, 16, 20, 24, 28, 32]);
        let ev: Vec<usize> = (0..10).filter(|&e| g.is_event(e, 10)).collect();
        assert_eq!(ev, vec![1, 5, 8]);
    }
}
