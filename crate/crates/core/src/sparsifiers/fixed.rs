use super::{HookContext, Sparsifier};
use crate::error::{Error, Result};
use crate::model::LayerSpec;
use crate::sparsity::{random_mask_from_plan, solve_erk_plan, solve_uniform_plan, MaskSet, PlanKind};
use crate::tensor::Float;
use crate::train::derive_seed;

/// No sparsification; masks stay all-ones.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dense;

impl Sparsifier for Dense {
    fn name(&self) -> &'static str {
        "dense"
    }
}

/// Trains under whatever masks it is handed, unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeepMasks;

impl Sparsifier for KeepMasks {
    fn name(&self) -> &'static str {
        "keep_masks"
    }
}

const MASK_STREAM: u64 = 0x6d61_736b;

/// Random placement of an ERK or uniform plan at density `1 − s`. SET and the
/// fixed random variants share this, so equal seeds give equal masks.
pub fn initial_random_masks(layers: &[LayerSpec], kind: PlanKind, sparsity: Float, seed: u64) -> Result<MaskSet> {
    let plan = match kind {
        PlanKind::Erk | PlanKind::Er => solve_erk_plan(layers, 1.0 - sparsity)?,
        PlanKind::Uniform => solve_uniform_plan(layers, 1.0 - sparsity)?,
        PlanKind::Explicit => return Err(Error::input("explicit plans carry their own densities")),
    };
    random_mask_from_plan(&plan, layers, derive_seed(seed, MASK_STREAM, 0))
}

/// Random topology from a density plan, fixed for the whole run.
#[derive(Debug, Clone)]
pub struct FixedRandom {
    kind: PlanKind,
    target: Float,
}

impl FixedRandom {
    pub fn new(kind: PlanKind, target: Float) -> Result<Self> {
        if !(0.0..1.0).contains(&target) {
            return Err(Error::input("sparsity must lie in [0, 1)"));
        }
        Ok(FixedRandom { kind, target })
    }
}

impl Sparsifier for FixedRandom {
    fn name(&self) -> &'static str {
        match self.kind {
            PlanKind::Uniform => "uniform",
            _ => "random",
        }
    }

    fn on_init(&mut self, ctx: &mut HookContext) -> Result<()> {
        *ctx.masks = initial_random_masks(ctx.model.layer_shapes(), self.kind, self.target, ctx.seed)?;
        Ok(())
    }
}
