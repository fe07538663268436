//! Layer-wise density allocation: uniform, ER/ERK and explicit plans, with an
//! exact rounding repair so the global nonzero count matches the target.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec};
use crate::sparsity::{LayerMask, MaskSet};
use crate::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    Uniform,
    /// ERK over a network of linear layers only.
    Er,
    Erk,
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityPlan {
    pub kind: PlanKind,
    /// Global target sparsity `s`.
    pub target_sparsity: Float,
    /// Per-layer densities before rounding.
    pub densities: Vec<Float>,
    /// Per-layer nonzero allocation after rounding repair.
    pub counts: Vec<usize>,
    pub layer_sizes: Vec<usize>,
}

impl DensityPlan {
    pub fn total_nonzeros(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn allocated_densities(&self) -> Vec<Float> {
        self.counts
            .iter()
            .zip(&self.layer_sizes)
            .map(|(&c, &d)| c as Float / d as Float)
            .collect()
    }
}

/// Unnormalized ERK score `(n_in + n_out + k_h + k_w) / (n_in·n_out·k_h·k_w)`;
/// linear layers use the kernel-free form `(n_in + n_out) / (n_in·n_out)`.
pub fn erk_score(layer: &LayerSpec) -> Float {
    match layer.kind {
        LayerKind::Linear => {
            (layer.fan_in + layer.fan_out) as Float / (layer.fan_in * layer.fan_out) as Float
        }
        LayerKind::Conv => {
            (layer.fan_in + layer.fan_out + layer.kernel_h + layer.kernel_w) as Float
                / (layer.fan_in * layer.fan_out * layer.kernel_h * layer.kernel_w) as Float
        }
    }
}

fn check_density(density: Float) -> Result<()> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::input(format!("target density {density} must lie in (0, 1]")));
    }
    Ok(())
}

fn check_layers(layers: &[LayerSpec]) -> Result<Vec<usize>> {
    if layers.is_empty() {
        return Err(Error::input("plan needs at least one layer"));
    }
    Ok(layers.iter().map(|l| l.param_count).collect())
}

/// ERK allocation: `density_l = min(1, c·r_l)` with `c` chosen so the plan
/// holds `density · Σ d_l` weights. Layers that saturate are frozen at 1 and
/// `c` is re-solved over the rest until no new layer saturates.
pub fn solve_erk_plan(layers: &[LayerSpec], density: Float) -> Result<DensityPlan> {
    check_density(density)?;
    let sizes = check_layers(layers)?;
    let scores: Vec<Float> = layers.iter().map(erk_score).collect();
    let total: usize = sizes.iter().sum();
    let budget = density * total as Float;
    let mut capped = vec![false; layers.len()];
    let mut scale;
    loop {
        let fixed: Float = sizes
            .iter()
            .zip(&capped)
            .filter(|(_, &c)| c)
            .map(|(&d, _)| d as Float)
            .sum();
        let denom: Float = scores
            .iter()
            .zip(&sizes)
            .zip(&capped)
            .filter(|(_, &c)| !c)
            .map(|((&r, &d), _)| r * d as Float)
            .sum();
        if denom == 0.0 {
            scale = 0.0;
            break;
        }
        scale = (budget - fixed) / denom;
        let mut changed = false;
        for (l, &r) in scores.iter().enumerate() {
            if !capped[l] && scale * r > 1.0 {
                capped[l] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let densities: Vec<Float> = scores
        .iter()
        .zip(&capped)
        .map(|(&r, &c)| if c { 1.0 } else { (scale * r).clamp(0.0, 1.0) })
        .collect();
    let kind = if layers.iter().all(|l| l.kind == LayerKind::Linear) {
        PlanKind::Er
    } else {
        PlanKind::Erk
    };
    let target = (density * total as Float).round() as usize;
    let counts = repair_rounding(&densities, &sizes, target);
    Ok(DensityPlan {
        kind,
        target_sparsity: 1.0 - density,
        densities,
        counts,
        layer_sizes: sizes,
    })
}

/// Recovers the ERK scale `c` from a plan's densities over unsaturated layers.
pub fn erk_scale(layers: &[LayerSpec], plan: &DensityPlan) -> Option<Float> {
    layers
        .iter()
        .zip(&plan.densities)
        .find(|(_, &d)| d < 1.0)
        .map(|(l, &d)| d / erk_score(l))
}

pub fn solve_uniform_plan(layers: &[LayerSpec], density: Float) -> Result<DensityPlan> {
    check_density(density)?;
    let sizes = check_layers(layers)?;
    let densities = vec![density; layers.len()];
    let total: usize = sizes.iter().sum();
    let target = (density * total as Float).round() as usize;
    let counts = repair_rounding(&densities, &sizes, target);
    Ok(DensityPlan {
        kind: PlanKind::Uniform,
        target_sparsity: 1.0 - density,
        densities,
        counts,
        layer_sizes: sizes,
    })
}

pub fn explicit_plan(layers: &[LayerSpec], densities: Vec<Float>) -> Result<DensityPlan> {
    let sizes = check_layers(layers)?;
    if densities.len() != layers.len() || densities.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(Error::input("explicit plan needs one density in [0, 1] per layer"));
    }
    let wanted: Float = densities.iter().zip(&sizes).map(|(&d, &n)| d * n as Float).sum();
    let total: usize = sizes.iter().sum();
    let target = wanted.round() as usize;
    let counts = repair_rounding(&densities, &sizes, target);
    Ok(DensityPlan {
        kind: PlanKind::Explicit,
        target_sparsity: 1.0 - target as Float / total as Float,
        densities,
        counts,
        layer_sizes: sizes,
    })
}

/// `floor(density_l · d_l)` per layer, then the remaining deficit is handed out
/// one nonzero at a time in descending fractional remainder (ties to the lower
/// layer index) until the total equals `target`.
pub fn repair_rounding(densities: &[Float], sizes: &[usize], target: usize) -> Vec<usize> {
    let exact: Vec<Float> = densities
        .iter()
        .zip(sizes)
        .map(|(&d, &n)| (d * n as Float).clamp(0.0, n as Float))
        .collect();
    let mut counts: Vec<usize> = exact
        .iter()
        .zip(sizes)
        .map(|(&e, &n)| (e.floor() as usize).min(n))
        .collect();
    let capacity: usize = sizes.iter().sum();
    let target = target.min(capacity);
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    let frac = |l: usize| exact[l] - exact[l].floor();
    order.sort_by(|&a, &b| frac(b).partial_cmp(&frac(a)).unwrap().then(a.cmp(&b)));
    let mut assigned: usize = counts.iter().sum();
    while assigned < target {
        let before = assigned;
        for &l in &order {
            if assigned == target {
                break;
            }
            if counts[l] < sizes[l] {
                counts[l] += 1;
                assigned += 1;
            }
        }
        debug_assert!(assigned > before);
    }
    while assigned > target {
        for &l in order.iter().rev() {
            if assigned == target {
                break;
            }
            if counts[l] > 0 {
                counts[l] -= 1;
                assigned -= 1;
            }
        }
    }
    counts
}

/// Places each layer's allocated nonzeros uniformly at random without replacement.
pub fn random_mask_from_plan(plan: &DensityPlan, layers: &[LayerSpec], seed: u64) -> Result<MaskSet> {
    if layers.len() != plan.counts.len() {
        return Err(Error::input("plan and layer list differ in length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = layers
        .iter()
        .zip(&plan.counts)
        .map(|(l, &k)| {
            let mut mask = LayerMask::zeros(l.name.clone(), &l.weight_dims());
            if k == l.param_count {
                return LayerMask::ones(l.name.clone(), &l.weight_dims());
            }
            for i in sample(&mut rng, l.param_count, k).iter() {
                mask.set(i, true);
            }
            mask
        })
        .collect();
    Ok(MaskSet::new(masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsity::global_sparsity;

    pub(crate) fn linear(name: &str, fan_in: usize, fan_out: usize) -> LayerSpec {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Linear,
            fan_in,
            fan_out,
            kernel_h: 1,
            kernel_w: 1,
            param_count: fan_in * fan_out,
            out_h: 1,
            out_w: 1,
        }
    }

    #[test]
    fn erk_single_layer_matches_target() {
        let p = solve_erk_plan(&[linear("a", 7, 5)], 0.3).unwrap();
        assert!((p.densities[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn erk_two_layer_hand_example() {
        let layers = [linear("a", 4, 4), linear("b", 4, 2)];
        let p = solve_erk_plan(&layers, 0.5).unwrap();
        assert!((p.densities[0] - 3.0 / 7.0).abs() < 1e-12);
        assert!((p.densities[1] - 9.0 / 14.0).abs() < 1e-12);
        assert!((erk_scale(&layers, &p).unwrap() - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(p.kind, PlanKind::Er);
        assert_eq!(p.counts, vec![7, 5]);
    }

    #[test]
    fn erk_full_density_saturates() {
        let layers = [linear("a", 4, 4), linear("b", 4, 2), linear("c", 30, 2)];
        let p = solve_erk_plan(&layers, 1.0).unwrap();
        assert!(p.densities.iter().all(|&d| d == 1.0));
        assert_eq!(p.counts, vec![16, 8, 60]);
    }

    #[test]
    fn erk_rejects_infeasible() {
        assert!(solve_erk_plan(&[linear("a", 2, 2)], 1.5).is_err());
        assert!(solve_erk_plan(&[linear("a", 2, 2)], 0.0).is_err());
    }

    #[test]
    fn uniform_counts() {
        let layers = [linear("a", 10, 1), linear("b", 30, 1)];
        let p = solve_uniform_plan(&layers, 0.2).unwrap();
        assert_eq!(p.counts, vec![2, 6]);
        let p = solve_uniform_plan(&layers, 1.0).unwrap();
        assert_eq!(p.counts, vec![10, 30]);
    }

    #[test]
    fn uniform_odd_layer_repair() {
        // 0.5 of 3 params: floor gives 1, global round(1.5) = 2 adds one back.
        let p = solve_uniform_plan(&[linear("a", 3, 1)], 0.5).unwrap();
        assert_eq!(p.counts, vec![2]);
        let p = solve_uniform_plan(&[linear("a", 3, 1), linear("b", 3, 1)], 0.5).unwrap();
        assert_eq!(p.counts, vec![2, 1]);
    }

    #[test]
    fn repair_hits_target_exactly() {
        let counts = repair_rounding(&[0.33, 0.33, 0.33], &[10, 10, 10], 10);
        assert_eq!(counts.iter().sum::<usize>(), 10);
        assert_eq!(counts, vec![4, 3, 3]);
        let counts = repair_rounding(&[0.9, 0.9], &[10, 10], 17);
        assert_eq!(counts, vec![9, 8]);
    }

    #[test]
    fn random_masks_follow_plan() {
        let layers = [linear("a", 10, 10), linear("b", 10, 3)];
        let p = solve_erk_plan(&layers, 0.4).unwrap();
        let m1 = random_mask_from_plan(&p, &layers, 11).unwrap();
        let m2 = random_mask_from_plan(&p, &layers, 11).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.per_layer_nonzeros(), p.counts);
        assert!((global_sparsity(&m1) - 0.6).abs() <= 1.0 / 130.0);
        let full = solve_uniform_plan(&layers, 1.0).unwrap();
        for seed in 0..3 {
            let m = random_mask_from_plan(&full, &layers, seed).unwrap();
            assert_eq!(m.nonzero_count(), 130);
        }
    }
}
