//! Score-based thresholding. Ties always resolve by (layer, flat index)
//! ascending, keeping the earlier position.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::sparsity::{DensityPlan, MaskSet};
use crate::tensor::Float;

fn check_shapes(template: &MaskSet, scores: &[&[Float]]) -> Result<()> {
    if template.len() != scores.len() {
        return Err(Error::dim(format!(
            "{} score layers for {} masks",
            scores.len(),
            template.len()
        )));
    }
    for (m, s) in template.iter().zip(scores) {
        if m.len() != s.len() {
            return Err(Error::dim(format!(
                "layer {} has {} scores for {} weights",
                m.name(),
                s.len(),
                m.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("scores of layer {}", m.name())));
        }
    }
    Ok(())
}

fn by_score_then_position(a: &(Float, usize, usize), b: &(Float, usize, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Keeps the `k` highest scores across all layers. When `active` is given,
/// only its set positions are eligible, so the result is a subset of it.
pub fn global_top_k_mask(
    template: &MaskSet,
    scores: &[&[Float]],
    k: usize,
    active: Option<&MaskSet>,
) -> Result<MaskSet> {
    check_shapes(template, scores)?;
    let mut entries: Vec<(Float, usize, usize)> = Vec::with_capacity(template.total_params());
    for (l, s) in scores.iter().enumerate() {
        for (i, &v) in s.iter().enumerate() {
            if active.is_none_or(|a| a.layer(l).get(i)) {
                entries.push((v, l, i));
            }
        }
    }
    if k > entries.len() {
        return Err(Error::input(format!(
            "cannot keep {k} weights out of {} eligible",
            entries.len()
        )));
    }
    entries.sort_by(by_score_then_position);
    let mut out = template.clone();
    for m in out.masks_mut() {
        (0..m.len()).for_each(|i| m.set(i, false));
    }
    for &(_, l, i) in &entries[..k] {
        out.layer_mut(l).set(i, true);
    }
    Ok(out)
}

/// Number of weights kept at sparsity `s`: `round((1 − s) · Σ d_l)`.
pub fn keep_count(total: usize, sparsity: Float) -> usize {
    (((1.0 - sparsity) * total as Float).round() as usize).min(total)
}

/// Global one-shot magnitude pruning to sparsity `s ∈ [0, 1)`.
pub fn global_magnitude_mask(template: &MaskSet, weights: &[&[Float]], sparsity: Float) -> Result<MaskSet> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::input(format!("sparsity {sparsity} must lie in [0, 1)")));
    }
    let mags: Vec<Vec<Float>> = weights.iter().map(|w| w.iter().map(|v| v.abs()).collect()).collect();
    let views: Vec<&[Float]> = mags.iter().map(Vec::as_slice).collect();
    global_top_k_mask(template, &views, keep_count(template.total_params(), sparsity), None)
}

/// Per-layer magnitude pruning to the plan's allocated counts.
pub fn layerwise_magnitude_mask(template: &MaskSet, weights: &[&[Float]], plan: &DensityPlan) -> Result<MaskSet> {
    check_shapes(template, weights)?;
    if plan.counts.len() != template.len() {
        return Err(Error::dim("plan and masks differ in layer count"));
    }
    let mut out = template.clone();
    for (l, (w, &k)) in weights.iter().zip(&plan.counts).enumerate() {
        if k > w.len() {
            return Err(Error::input(format!("budget {k} exceeds layer size {}", w.len())));
        }
        let mut entries: Vec<(Float, usize, usize)> =
            w.iter().enumerate().map(|(i, v)| (v.abs(), l, i)).collect();
        entries.sort_by(by_score_then_position);
        let mask = out.layer_mut(l);
        (0..mask.len()).for_each(|i| mask.set(i, false));
        for &(_, _, i) in &entries[..k] {
            mask.set(i, true);
        }
    }
    Ok(out)
}
