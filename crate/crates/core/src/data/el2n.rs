use std::fmt::Write as _;

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sparsity::MaskSet;
use crate::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRecord {
    pub index: usize,
    pub el2n: Float,
    /// Number of scoring models averaged into `el2n`.
    pub scorers: usize,
}

/// `‖p − onehot(label)‖₂`.
pub fn el2n(probs: &[Float], label: usize) -> Float {
    probs
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let d = p - if c == label { 1.0 } else { 0.0 };
            d * d
        })
        .sum::<Float>()
        .sqrt()
}

/// Mean EL2N over the scoring models, evaluated in batches of `batch`.
pub fn el2n_score(
    scorers: &[(&Model, Option<&MaskSet>)],
    data: &Dataset,
    batch: usize,
) -> Result<Vec<ScoreRecord>> {
    if scorers.is_empty() {
        return Err(Error::input("need at least one scoring model"));
    }
    if batch == 0 {
        return Err(Error::input("batch size must be positive"));
    }
    let n = data.len();
    let mut sums = vec![0.0; n];
    for &(model, masks) in scorers {
        if model.classes() != data.classes() {
            return Err(Error::dim(format!(
                "scoring model has {} classes, data has {}",
                model.classes(),
                data.classes()
            )));
        }
        let c = model.classes();
        for start in (0..n).step_by(batch) {
            let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
            let (x, y) = data.batch(&idx)?;
            let mut pass = model.forward(x, masks, false)?;
            let loss = pass.loss(&y)?;
            let probs = pass.tape.probs(loss).expect("cross-entropy node keeps probabilities");
            for (k, &i) in idx.iter().enumerate() {
                sums[i] += el2n(&probs[k * c..(k + 1) * c], y[k]);
            }
        }
    }
    let k = scorers.len();
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(index, s)| ScoreRecord {
            index,
            el2n: s / k as Float,
            scorers: k,
        })
        .collect())
}

/// `index,el2n` with six decimals.
pub fn scores_csv(scores: &[ScoreRecord]) -> String {
    let mut out = String::from("index,el2n\n");
    for s in scores {
        writeln!(out, "{},{:.6}", s.index, s.el2n).unwrap();
    }
    out
}

pub fn read_scores_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("index,el2n") {
        return Err(Error::input("score file must start with `index,el2n`"));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::input(format!("malformed score row {}: `{line}`", n + 2));
        let (i, s) = line.split_once(',').ok_or_else(bad)?;
        out.push(ScoreRecord {
            index: i.trim().parse().map_err(|_| bad())?,
            el2n: s.trim().parse().map_err(|_| bad())?,
            scorers: 1,
        });
    }
    if out.iter().enumerate().any(|(k, r)| r.index != k) {
        return Err(Error::input("score rows must be indexed 0..N in order"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(el2n(&[0.0, 1.0, 0.0], 1), 0.0);
        let u = vec![0.1; 10];
        assert!((el2n(&u, 3) - (0.9 as Float).sqrt()).abs() < 1e-12);
        assert!((el2n(&[0.6, 0.4], 0) - 0.565685).abs() < 1e-6);
        assert!((el2n(&[0.0, 1.0], 0) - (2.0 as Float).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let s = vec![
            ScoreRecord { index: 0, el2n: 0.5, scorers: 1 },
            ScoreRecord { index: 1, el2n: 0.1234567, scorers: 1 },
        ];
        let text = scores_csv(&s);
        assert_eq!(text, "index,el2n\n0,0.500000\n1,0.123457\n");
        let back = read_scores_csv(&text).unwrap();
        assert_eq!(back[1].el2n, 0.123457);
        assert!(read_scores_csv("i,s\n").is_err());
        assert!(read_scores_csv("index,el2n\n1,0.5\n").is_err());
    }
}
