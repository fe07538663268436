use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::sparsity::MaskSet;
use crate::tensor::{Float, Tensor};

/// ℓ∞ PGD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub epsilon: Float,
    pub alpha: Float,
    pub steps: usize,
    /// Draw δ⁰ uniformly from `[−ε, ε]`; otherwise δ⁰ = 0.
    pub random_start: bool,
}

impl PgdConfig {
    /// 20 steps of 2/255 inside an 8/255 ball.
    pub fn eval_default() -> Self {
        PgdConfig {
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            steps: 20,
            random_start: true,
        }
    }

    /// 10 steps of 2/255 inside an 8/255 ball.
    pub fn train_default() -> Self {
        PgdConfig {
            steps: 10,
            ..Self::eval_default()
        }
    }

    /// ε may be 0 (no perturbation); α must be positive when steps run.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::input(format!("epsilon {} must be finite and ≥ 0", self.epsilon)));
        }
        if self.steps > 0 && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::input(format!("alpha {} must be positive", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Tensor,
    pub epsilon: Float,
    pub alpha: Float,
    pub steps: usize,
}

impl Perturbation {
    /// `x + δ`, which lies in `[0, 1]` by construction.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.dims() != self.delta.dims() {
            return Err(Error::dim("perturbation dims differ from input"));
        }
        let data = x.data().iter().zip(self.delta.data()).map(|(a, d)| a + d).collect();
        Tensor::new(x.dims().to_vec(), data)
    }
}

fn sign(v: Float) -> Float {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Shrinks δ so that `x + δ` lands in `[0, 1]`; δ is left alone when it already does.
fn box_project(x: Float, d: Float) -> Float {
    if x + d > 1.0 {
        let mut d = 1.0 - x;
        while x + d > 1.0 {
            d = d.next_down();
        }
        d
    } else if x + d < 0.0 {
        -x
    } else {
        d
    }
}

/// Runs the PGD iteration from `delta`, querying `grad(x + δ)` for ∂L/∂x.
///
/// Each step sets `δ ← clip_ε(δ + α·sign(g))` and then shrinks δ so that
/// `x + δ ∈ [0, 1]`. `sign(0) = 0`.
pub fn pgd_iterate(
    x: &[Float],
    mut delta: Vec<Float>,
    cfg: &PgdConfig,
    mut grad: impl FnMut(&[Float]) -> Result<Vec<Float>>,
) -> Result<Vec<Float>> {
    cfg.validate()?;
    if delta.len() != x.len() {
        return Err(Error::dim("δ and x differ in length"));
    }
    let eps = cfg.epsilon;
    let mut probe = vec![0.0; x.len()];
    for step in 0..cfg.steps {
        probe.iter_mut().zip(x.iter().zip(&delta)).for_each(|(p, (a, d))| *p = a + d);
        let g = grad(&probe)?;
        if g.len() != x.len() {
            return Err(Error::dim("gradient and x differ in length"));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Attack(format!("non-finite input gradient at step {step}")));
        }
        for ((d, &gi), &xi) in delta.iter_mut().zip(&g).zip(x) {
            *d = box_project(xi, (*d + cfg.alpha * sign(gi)).clamp(-eps, eps));
        }
    }
    Ok(delta)
}

/// PGD against `model` on the batch `(x, y)`, ascending the mean cross-entropy.
pub fn pgd_attack(
    model: &Model,
    masks: Option<&MaskSet>,
    x: &Tensor,
    y: &[usize],
    cfg: &PgdConfig,
    seed: u64,
) -> Result<Perturbation> {
    cfg.validate()?;
    let eps = cfg.epsilon;
    let delta0: Vec<Float> = if cfg.random_start && eps > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        x.data()
            .iter()
            .map(|&xi| box_project(xi, rng.random_range(-eps..=eps)))
            .collect()
    } else {
        vec![0.0; x.len()]
    };
    let dims = x.dims().to_vec();
    let delta = pgd_iterate(x.data(), delta0, cfg, |probe| {
        let t = Tensor::new(dims.clone(), probe.to_vec())?;
        match model.input_gradient(t, y, masks) {
            Ok((_, g)) => Ok(g),
            Err(Error::NonFinite(what)) => Err(Error::Attack(format!("non-finite {what}"))),
            Err(e) => Err(e),
        }
    })?;
    Ok(Perturbation {
        delta: Tensor::new(dims, delta)?,
        epsilon: cfg.epsilon,
        alpha: cfg.alpha,
        steps: cfg.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(steps: usize) -> PgdConfig {
        PgdConfig {
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            steps,
            random_start: false,
        }
    }

    #[test]
    fn hand_iterated_example() {
        let x = vec![0.5; 4];
        let plus = |_: &[Float]| Ok(vec![1.0; 4]);
        let one = pgd_iterate(&x, vec![0.0; 4], &cfg(1), plus).unwrap();
        assert!(one.iter().all(|&d| d == 2.0 / 255.0));
        let five = pgd_iterate(&x, vec![0.0; 4], &cfg(5), plus).unwrap();
        assert!(five.iter().all(|&d| d == 8.0 / 255.0));
    }

    #[test]
    fn zero_steps_and_zero_gradient_keep_start() {
        let x = vec![0.2, 0.9];
        let d0 = vec![0.01, -0.02];
        let same = pgd_iterate(&x, d0.clone(), &cfg(0), |_| unreachable!()).unwrap();
        assert_eq!(same, d0);
        let flat = pgd_iterate(&x, d0.clone(), &cfg(3), |_| Ok(vec![0.0; 2])).unwrap();
        assert_eq!(flat, d0);
    }

    #[test]
    fn projection_clamps_to_ball() {
        let c = PgdConfig { epsilon: 0.1, alpha: 0.15, steps: 1, random_start: false };
        let d = pgd_iterate(&[0.5], vec![0.0], &c, |_| Ok(vec![1.0])).unwrap();
        assert_eq!(d, vec![0.1]);
    }

    #[test]
    fn box_projection_near_edges() {
        let d = pgd_iterate(&[0.99, 0.01], vec![0.0; 2], &cfg(4), |_| Ok(vec![1.0, -1.0])).unwrap();
        assert!(0.99 + d[0] <= 1.0 && 0.01 + d[1] >= 0.0);
        assert_eq!(0.01 + d[1], 0.0);
        for x in [0.1, 0.3, 0.7, 1.0 - 1e-17, 0.987654321] {
            let p = box_project(x, 0.5);
            assert!(x + p <= 1.0 && p <= 0.5);
        }
    }

    #[test]
    fn non_finite_gradient_is_attack_error() {
        let r = pgd_iterate(&[0.5], vec![0.0], &cfg(1), |_| Ok(vec![Float::NAN]));
        assert!(matches!(r, Err(Error::Attack(_))));
    }
}
