//! Sparsification controllers as hooks around the training loop, and the
//! two-phase LTH/OMP pipelines.

mod fixed;
mod gmp;
mod pipeline;
mod set;
mod snip;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use fixed::{initial_random_masks, Dense, FixedRandom, KeepMasks};
pub use gmp::{gmp_endpoints, gmp_sparsity, Gmp, GmpOptions};
pub use pipeline::{lth_pipeline, omp_pipeline, PipelineOutcome};
pub use set::{Set, SetEvent, SetOptions};
pub use snip::{snip_batch_indices, snip_mask, snip_scores, Snip};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sparsity::{solve_erk_plan, FlopsLedger, MaskSet, Phase, PlanKind};
use crate::tensor::Float;
use crate::train::{MetricsRecord, TrainObserver, Trainer};

/// State a hook may touch. Hooks mutate masks and, for rewinding methods,
/// parameters; nothing else.
pub struct HookContext<'a> {
    pub model: &'a mut Model,
    pub masks: &'a mut MaskSet,
    pub train: &'a Dataset,
    pub epochs: usize,
    pub seed: u64,
}

/// Lifecycle hooks invoked by [`Trainer::run`], strictly serialized with
/// optimizer steps. Masked weights are zeroed by the trainer after `on_init`
/// and by the optimizer after every step.
pub trait Sparsifier {
    fn name(&self) -> &'static str;

    fn on_init(&mut self, _ctx: &mut HookContext) -> Result<()> {
        Ok(())
    }

    fn on_epoch_start(&mut self, _epoch: usize, _ctx: &mut HookContext) -> Result<()> {
        Ok(())
    }

    fn after_optimizer_step(&mut self, _iteration: usize, _ctx: &mut HookContext) -> Result<()> {
        Ok(())
    }

    fn on_train_end(&mut self, _ctx: &mut HookContext) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dense,
    Gmp,
    Set,
    Snip,
    Lth,
    Omp,
    OmpErk,
    Random,
    Uniform,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Dense,
        Method::Gmp,
        Method::Set,
        Method::Snip,
        Method::Lth,
        Method::Omp,
        Method::OmpErk,
        Method::Random,
        Method::Uniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dense => "dense",
            Method::Gmp => "gmp",
            Method::Set => "set",
            Method::Snip => "snip",
            Method::Lth => "lth",
            Method::Omp => "omp",
            Method::OmpErk => "omp_erk",
            Method::Random => "random",
            Method::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Dense pre-training followed by pruning and retraining.
    pub fn is_two_phase(self) -> bool {
        matches!(self, Method::Lth | Method::Omp | Method::OmpErk)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Knobs of the individual controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOptions {
    pub gmp: GmpOptions,
    pub set: SetOptions,
    pub snip_batch: usize,
}

impl Default for MethodOptions {
    fn default() -> Self {
        MethodOptions {
            gmp: GmpOptions::default(),
            set: SetOptions::default(),
            snip_batch: 128,
        }
    }
}

/// Runs a method's full training lifecycle from `model`'s current weights.
/// Returns per-epoch records (numbered across phases) and the final masks.
pub fn run_method(
    method: Method,
    target_sparsity: Float,
    options: &MethodOptions,
    trainer: &Trainer,
    model: &mut Model,
    ledger: &mut FlopsLedger,
    observer: &mut dyn TrainObserver,
) -> Result<(Vec<MetricsRecord>, MaskSet)> {
    let s = target_sparsity;
    match method {
        Method::Dense if s != 0.0 => return Err(Error::input("dense method requires sparsity 0")),
        Method::Dense => {}
        _ if !(s > 0.0 && s < 1.0) => {
            return Err(Error::input(format!("{method} requires sparsity in (0, 1), got {s}")))
        }
        _ => {}
    }
    let mut masks = model.spec().full_masks();
    let mut controller: Box<dyn Sparsifier> = match method {
        Method::Dense => Box::new(Dense),
        Method::Gmp => Box::new(Gmp::new(s, options.gmp.clone())?),
        Method::Set => Box::new(Set::new(s, options.set.clone())?),
        Method::Snip => Box::new(Snip::new(s, options.snip_batch)?),
        Method::Random => Box::new(FixedRandom::new(PlanKind::Erk, s)?),
        Method::Uniform => Box::new(FixedRandom::new(PlanKind::Uniform, s)?),
        Method::Lth => {
            let out = lth_pipeline(trainer, model, s, ledger, observer)?;
            return Ok((out.records, out.masks));
        }
        Method::Omp => {
            let out = omp_pipeline(trainer, model, s, None, ledger, observer)?;
            return Ok((out.records, out.masks));
        }
        Method::OmpErk => {
            let plan = solve_erk_plan(model.layer_shapes(), 1.0 - s)?;
            let out = omp_pipeline(trainer, model, s, Some(&plan), ledger, observer)?;
            return Ok((out.records, out.masks));
        }
    };
    let records = trainer.run(
        model,
        &mut masks,
        controller.as_mut(),
        Phase::SparseTrain,
        0,
        ledger,
        observer,
    )?;
    Ok((records, masks))
}
