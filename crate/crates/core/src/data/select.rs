use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Float;

/// Indices of the `⌈keep_frac·N⌉` highest scores, ties to the lower index,
/// returned in ascending index order.
pub fn hard_indices(scores: &[Float], keep_frac: Float) -> Result<Vec<usize>> {
    if !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(Error::input(format!("keep_frac {keep_frac} outside (0, 1]")));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::input(format!("non-finite score {bad}")));
    }
    let n = scores.len();
    let keep = ((keep_frac * n as Float).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    Ok(order)
}

/// Keeps the hardest samples, preserving original order.
pub fn filter_hard(data: &Dataset, scores: &[Float], keep_frac: Float) -> Result<Dataset> {
    if scores.len() != data.len() {
        return Err(Error::dim(format!(
            "{} scores for {} samples",
            scores.len(),
            data.len()
        )));
    }
    data.subset(&hard_indices(scores, keep_frac)?)
}

/// `round(ratio·N)` distinct indices drawn uniformly, in ascending order.
pub fn subsample_indices(n: usize, ratio: Float, seed: u64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::input(format!("data ratio {ratio} outside (0, 1]")));
    }
    let k = (ratio * n as Float).round() as usize;
    if k == 0 {
        return Err(Error::input("data ratio leaves no samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn subsample(data: &Dataset, ratio: Float, seed: u64) -> Result<Dataset> {
    data.subset(&subsample_indices(data.len(), ratio, seed)?)
}
