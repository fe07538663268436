//! Masks, sparsity bookkeeping, density plans, magnitude thresholding,
//! density reports and FLOPs accounting.

pub mod flops;
pub mod magnitude;
mod mask;
pub mod plan;
pub mod report;

pub use flops::{flops_forward, flops_training_step, layer_forward_flops, FlopsLedger, Phase};
pub use magnitude::{global_magnitude_mask, global_top_k_mask, keep_count, layerwise_magnitude_mask};
pub use mask::{global_sparsity, LayerMask, MaskSet};
pub use plan::{
    erk_scale, erk_score, explicit_plan, random_mask_from_plan, repair_rounding, solve_erk_plan,
    solve_uniform_plan, DensityPlan, PlanKind,
};
pub use report::{density_csv, density_report, DensityRow};
