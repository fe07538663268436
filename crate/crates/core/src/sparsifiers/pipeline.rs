use super::{Dense, KeepMasks};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sparsity::{global_magnitude_mask, layerwise_magnitude_mask, DensityPlan, FlopsLedger, MaskSet, Phase};
use crate::tensor::Float;
use crate::train::{MetricsRecord, TrainObserver, Trainer};

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    /// Dense-phase records followed by retrain records, numbered continuously.
    pub records: Vec<MetricsRecord>,
    pub masks: MaskSet,
}

enum Restart {
    /// Rewind surviving weights to their initial values.
    Initial,
    /// Keep the trained dense weights.
    Trained,
}

fn two_phase(
    trainer: &Trainer,
    model: &mut Model,
    sparsity: Float,
    plan: Option<&DensityPlan>,
    restart: Restart,
    ledger: &mut FlopsLedger,
    observer: &mut dyn TrainObserver,
) -> Result<PipelineOutcome> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::input("sparsity must lie in [0, 1)"));
    }
    let theta0 = model.clone();
    let mut full = model.spec().full_masks();
    let mut records = trainer.run(model, &mut full, &mut Dense, Phase::DensePretrain, 0, ledger, observer)?;
    let weights = model.weight_slices();
    let mut masks = match plan {
        Some(p) => layerwise_magnitude_mask(&full, &weights, p)?,
        None => global_magnitude_mask(&full, &weights, sparsity)?,
    };
    if let Restart::Initial = restart {
        *model = theta0;
    }
    model.apply_masks(&masks)?;
    let offset = records.len();
    records.extend(trainer.run(model, &mut masks, &mut KeepMasks, Phase::Retrain, offset, ledger, observer)?);
    Ok(PipelineOutcome { records, masks })
}

/// One-shot lottery ticket: dense training, global magnitude pruning,
/// rewind to the initial weights, retraining under fixed masks.
pub fn lth_pipeline(
    trainer: &Trainer,
    model: &mut Model,
    sparsity: Float,
    ledger: &mut FlopsLedger,
    observer: &mut dyn TrainObserver,
) -> Result<PipelineOutcome> {
    two_phase(trainer, model, sparsity, None, Restart::Initial, ledger, observer)
}

/// One-shot magnitude pruning of the trained dense model, then retraining
/// from the trained weights. `plan` switches to per-layer budgets (OMP_ERK).
pub fn omp_pipeline(
    trainer: &Trainer,
    model: &mut Model,
    sparsity: Float,
    plan: Option<&DensityPlan>,
    ledger: &mut FlopsLedger,
    observer: &mut dyn TrainObserver,
) -> Result<PipelineOutcome> {
    two_phase(trainer, model, sparsity, plan, Restart::Trained, ledger, observer)
}
