//! SGD with momentum and coupled weight decay, plus a step learning-rate schedule.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::sparsity::MaskSet;
use crate::tensor::Float;

#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: Float,
    pub momentum: Float,
    pub weight_decay: Float,
    /// Per layer: (weight velocity, bias velocity).
    velocity: Vec<(Vec<Float>, Vec<Float>)>,
}

impl Sgd {
    pub fn new(learning_rate: Float, momentum: Float, weight_decay: Float) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::input("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::input("momentum must lie in [0, 1)"));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::input("weight decay must be nonnegative"));
        }
        Ok(Sgd {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self, layer: usize) -> Option<(&[Float], &[Float])> {
        self.velocity
            .get(layer)
            .map(|(w, b)| (w.as_slice(), b.as_slice()))
    }

    pub fn velocity_mut(&mut self, layer: usize) -> Option<&mut Vec<Float>> {
        self.velocity.get_mut(layer).map(|(w, _)| w)
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    fn ensure_buffers(&mut self, model: &Model) {
        if self.velocity.len() != model.layers().len() {
            self.velocity = model
                .layers()
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect();
        }
    }

    /// `v ← μv + (g + λθ); θ ← θ − ηv`, then masked weights (and their
    /// velocity) are forced back to exactly zero.
    pub fn step(&mut self, model: &mut Model, masks: Option<&MaskSet>) -> Result<()> {
        self.ensure_buffers(model);
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        for (l, layer) in model.layers_mut().iter_mut().enumerate() {
            let (vw, vb) = &mut self.velocity[l];
            for (tensor, v) in [(&mut layer.weight, vw), (&mut layer.bias, vb)] {
                let g = tensor
                    .grad()
                    .ok_or_else(|| Error::input("sgd step without populated gradients"))?
                    .to_vec();
                for ((theta, vel), gi) in tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
                    *vel = mu * *vel + (gi + wd * *theta);
                    *theta -= lr * *vel;
                }
            }
            if let Some(masks) = masks {
                let mask = masks.layer(l);
                mask.apply(layer.weight.data_mut());
                mask.apply(&mut self.velocity[l].0);
            }
        }
        if !model.all_finite() {
            return Err(Error::NonFinite("sgd step".into()));
        }
        Ok(())
    }
}

/// `lr(epoch) = initial_lr · factor^(#milestones ≤ epoch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLrSchedule {
    pub initial_lr: Float,
    pub milestones: Vec<usize>,
    pub factor: Float,
}

impl StepLrSchedule {
    pub fn new(initial_lr: Float, milestones: Vec<usize>, factor: Float) -> Result<Self> {
        if !(initial_lr > 0.0) {
            return Err(Error::input("initial learning rate must be positive"));
        }
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::input("decay factor must lie in (0, 1)"));
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("milestones must be strictly increasing"));
        }
        Ok(StepLrSchedule {
            initial_lr,
            milestones,
            factor,
        })
    }

    pub fn lr(&self, epoch: usize) -> Float {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.initial_lr * self.factor.powi(passed as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_mlp;
    use crate::sparsity::LayerMask;

    fn scalar_model() -> Model {
        let mut m = build_mlp(1, &[], 2, 0).unwrap();
        m.layers_mut()[0].weight.data_mut().fill(0.0);
        m
    }

    fn set_grads(m: &mut Model, g: Float) {
        m.zero_grad();
        for l in m.layers_mut() {
            let n = l.weight.len();
            l.weight.accumulate_grad(&vec![g; n]).unwrap();
            let n = l.bias.len();
            l.bias.accumulate_grad(&vec![g; n]).unwrap();
        }
    }

    #[test]
    fn single_plain_step() {
        let mut m = scalar_model();
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        set_grads(&mut m, 1.0);
        opt.step(&mut m, None).unwrap();
        assert!(m.layers()[0].weight.data().iter().all(|&w| w == -0.1));
    }

    #[test]
    fn two_momentum_steps() {
        let mut m = scalar_model();
        let mut opt = Sgd::new(0.1, 0.9, 0.0).unwrap();
        for _ in 0..2 {
            set_grads(&mut m, 1.0);
            opt.step(&mut m, None).unwrap();
        }
        for &w in m.layers()[0].weight.data() {
            assert!((w - -0.29).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_decay_is_coupled() {
        let mut m = scalar_model();
        m.layers_mut()[0].weight.data_mut().fill(1.0);
        let mut opt = Sgd::new(0.1, 0.9, 0.5).unwrap();
        set_grads(&mut m, 0.0);
        opt.step(&mut m, None).unwrap();
        // v = 0.5 * 1.0, θ = 1 - 0.1 * 0.5
        assert!((m.layers()[0].weight.data()[0] - 0.95).abs() < 1e-12);
        assert!((opt.velocity(0).unwrap().0[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn masked_position_stays_zero_despite_velocity() {
        let mut m = scalar_model();
        let mut opt = Sgd::new(0.1, 0.9, 0.0).unwrap();
        set_grads(&mut m, 1.0);
        opt.step(&mut m, None).unwrap();
        assert!(opt.velocity(0).unwrap().0[0] != 0.0);
        let masks = MaskSet::new(vec![LayerMask::from_bits("fc1", &[2, 1], vec![0, 1]).unwrap()]);
        set_grads(&mut m, 1.0);
        opt.step(&mut m, Some(&masks)).unwrap();
        assert_eq!(m.layers()[0].weight.data()[0], 0.0);
        assert!(m.layers()[0].weight.data()[1] != 0.0);
    }

    #[test]
    fn step_without_grads_errors() {
        let mut m = scalar_model();
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        assert!(opt.step(&mut m, None).is_err());
    }

    #[test]
    fn step_schedule() {
        let s = StepLrSchedule::new(0.1, vec![20, 30], 0.1).unwrap();
        assert_eq!(s.lr(0), 0.1);
        assert_eq!(s.lr(19), 0.1);
        assert!((s.lr(20) - 0.01).abs() < 1e-15);
        assert!((s.lr(35) - 0.001).abs() < 1e-15);
        assert!(StepLrSchedule::new(0.1, vec![3, 3], 0.1).is_err());
        assert!(StepLrSchedule::new(0.1, vec![], 1.0).is_err());
    }
}
