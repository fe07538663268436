use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HookContext, Sparsifier};
use crate::error::{Error, Result};
use crate::sparsity::{global_top_k_mask, keep_count, MaskSet};
use crate::tensor::Float;
use crate::train::derive_seed;

/// Connection sensitivity `|θ|·|∂L/∂θ|`.
pub fn snip_scores(weights: &[&[Float]], grads: &[Vec<Float>]) -> Vec<Vec<Float>> {
    weights
        .iter()
        .zip(grads)
        .map(|(w, g)| w.iter().zip(g).map(|(a, b)| a.abs() * b.abs()).collect())
        .collect()
}

/// Keeps the global top `round((1 − s)·Σd)` scores.
pub fn snip_mask(template: &MaskSet, scores: &[Vec<Float>], sparsity: Float) -> Result<MaskSet> {
    let views: Vec<&[Float]> = scores.iter().map(Vec::as_slice).collect();
    global_top_k_mask(template, &views, keep_count(template.total_params(), sparsity), None)
}

const SNIP_STREAM: u64 = 0x736e_6970;

/// The scoring mini-batch: the first `batch` entries of a seeded permutation.
pub fn snip_batch_indices(n: usize, batch: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SNIP_STREAM, 0));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(batch.min(n));
    idx
}

/// Pruning at initialization from one mini-batch; topology fixed afterwards.
#[derive(Debug, Clone)]
pub struct Snip {
    target: Float,
    batch: usize,
}

impl Snip {
    pub fn new(target: Float, batch: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&target) || batch == 0 {
            return Err(Error::input("snip needs sparsity in [0, 1) and a positive batch"));
        }
        Ok(Snip { target, batch })
    }
}

impl Sparsifier for Snip {
    fn name(&self) -> &'static str {
        "snip"
    }

    fn on_init(&mut self, ctx: &mut HookContext) -> Result<()> {
        let idx = snip_batch_indices(ctx.train.len(), self.batch, ctx.seed);
        let (x, y) = ctx.train.batch(&idx)?;
        let full = ctx.model.spec().full_masks();
        let (_, grads) = ctx.model.loss_and_grads(x, &y, Some(&full))?;
        let scores = snip_scores(&ctx.model.weight_slices(), &grads.weights);
        *ctx.masks = snip_mask(&full, &scores, self.target)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsity::LayerMask;

    #[test]
    fn hand_scores() {
        let w: [&[Float]; 1] = [&[1.0, -2.0]];
        let scores = snip_scores(&w, &[vec![0.5, -0.1]]);
        assert_eq!(scores[0], vec![0.5, 0.2]);
        let template = MaskSet::new(vec![LayerMask::ones("a", &[2])]);
        let m = snip_mask(&template, &scores, 0.5).unwrap();
        assert_eq!(m.layer(0).bits(), &[1, 0]);
    }

    #[test]
    fn zero_gradient_prunes_first() {
        let w: [&[Float]; 1] = [&[5.0, 0.1, 3.0]];
        let scores = snip_scores(&w, &[vec![0.0, 0.1, 0.2]]);
        let template = MaskSet::new(vec![LayerMask::ones("a", &[3])]);
        let m = snip_mask(&template, &scores, 1.0 / 3.0).unwrap();
        assert_eq!(m.layer(0).bits(), &[0, 1, 1]);
    }

    #[test]
    fn batch_indices_are_seeded() {
        let a = snip_batch_indices(1000, 128, 3);
        assert_eq!(a.len(), 128);
        assert_eq!(a, snip_batch_indices(1000, 128, 3));
        assert_ne!(a, snip_batch_indices(1000, 128, 4));
        assert_eq!(snip_batch_indices(10, 128, 3).len(), 10);
    }
}
