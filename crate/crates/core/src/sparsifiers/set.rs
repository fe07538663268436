use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{initial_random_masks, HookContext, Sparsifier};
use crate::error::{Error, Result};
use crate::sparsity::{LayerMask, PlanKind};
use crate::tensor::Float;
use crate::train::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetOptions {
    /// Fraction of each layer's active weights replaced per event.
    pub zeta: Float,
    /// Epochs between prune-and-grow events.
    pub interval: usize,
    /// Events stop once `epoch ≥ stop_frac·E`.
    pub stop_frac: Float,
}

impl Default for SetOptions {
    fn default() -> Self {
        SetOptions {
            zeta: 0.3,
            interval: 4,
            stop_frac: 0.75,
        }
    }
}

/// One layer's prune-and-grow outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetEvent {
    pub epoch: usize,
    pub layer: usize,
    pub pruned: usize,
    pub regrown: usize,
}

/// Sparse evolutionary training: ERK random start, then periodic removal of
/// the smallest-magnitude active weights and random regrowth at zero.
#[derive(Debug, Clone)]
pub struct Set {
    target: Float,
    opts: SetOptions,
    rng: ChaCha8Rng,
    pub events: Vec<SetEvent>,
}

const REGROW_STREAM: u64 = 0x7365_74;

impl Set {
    pub fn new(target: Float, opts: SetOptions) -> Result<Self> {
        if !(0.0..1.0).contains(&target) {
            return Err(Error::input("sparsity must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&opts.zeta) || opts.interval == 0 || !(0.0..=1.0).contains(&opts.stop_frac) {
            return Err(Error::input("set needs zeta in [0, 1], interval > 0, stop_frac in [0, 1]"));
        }
        Ok(Set {
            target,
            opts,
            rng: ChaCha8Rng::seed_from_u64(0),
            events: Vec::new(),
        })
    }

    pub fn is_event(&self, epoch: usize, epochs: usize) -> bool {
        epoch > 0 && epoch % self.opts.interval == 0 && (epoch as Float) < self.opts.stop_frac * epochs as Float
    }

    /// Prunes `min(round(ζ·nnz), #inactive)` smallest |w| (ties drop the later
    /// index) and regrows as many at positions that were inactive before the
    /// event, with weight 0. Returns `(pruned, regrown)`.
    pub fn prune_and_grow(
        mask: &mut LayerMask,
        weights: &mut [Float],
        zeta: Float,
        rng: &mut ChaCha8Rng,
    ) -> (usize, usize) {
        let active: Vec<usize> = (0..mask.len()).filter(|&i| mask.get(i)).collect();
        let inactive: Vec<usize> = (0..mask.len()).filter(|&i| !mask.get(i)).collect();
        let n = ((zeta * active.len() as Float).round() as usize).min(inactive.len());
        if n == 0 {
            return (0, 0);
        }
        let mut ranked = active;
        ranked.sort_by(|&a, &b| weights[a].abs().total_cmp(&weights[b].abs()).then(b.cmp(&a)));
        for &i in &ranked[..n] {
            mask.set(i, false);
            weights[i] = 0.0;
        }
        for k in sample(rng, inactive.len(), n).iter() {
            let i = inactive[k];
            mask.set(i, true);
            weights[i] = 0.0;
        }
        (n, n)
    }
}

impl Sparsifier for Set {
    fn name(&self) -> &'static str {
        "set"
    }

    fn on_init(&mut self, ctx: &mut HookContext) -> Result<()> {
        *ctx.masks = initial_random_masks(ctx.model.layer_shapes(), PlanKind::Erk, self.target, ctx.seed)?;
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, REGROW_STREAM, 0));
        Ok(())
    }

    fn on_epoch_start(&mut self, epoch: usize, ctx: &mut HookContext) -> Result<()> {
        if !self.is_event(epoch, ctx.epochs) {
            return Ok(());
        }
        for (l, layer) in ctx.model.layers_mut().iter_mut().enumerate() {
            let mask = ctx.masks.layer_mut(l);
            if mask.nonzero_count() == mask.len() {
                log::info!("set: layer {} is fully dense at epoch {epoch}; nothing to regrow", mask.name());
                self.events.push(SetEvent { epoch, layer: l, pruned: 0, regrown: 0 });
                continue;
            }
            let (pruned, regrown) =
                Set::prune_and_grow(mask, layer.weight.data_mut(), self.opts.zeta, &mut self.rng);
            self.events.push(SetEvent { epoch, layer: l, pruned, regrown });
        }
        Ok(())
    }
}
