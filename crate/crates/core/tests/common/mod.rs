//! Independent oracles shared by the integration suites. Nothing here calls
//! the code under test to compute an expected value.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparselab::engine::{relative_error, Tape, Var};
use sparselab::model::{LayerKind, Model, Stage};
use sparselab::sparsity::{LayerMask, MaskSet};
use sparselab::{Float, Result, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_tensor(r: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            // Box-Muller keeps this free of the crate's own distributions.
            let u1: f64 = r.random_range(1e-12..1.0);
            let u2: f64 = r.random();
            ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as Float
        })
        .collect();
    Tensor::new(dims.to_vec(), data).unwrap()
}

/// Same as [`normal_tensor`] but with every |value| at least `gap`, keeping
/// kinks of ReLU out of finite-difference stencils.
pub fn away_from_zero(r: &mut ChaCha8Rng, dims: &[usize], gap: Float) -> Tensor {
    let t = normal_tensor(r, dims);
    let data = t
        .data()
        .iter()
        .map(|&v| if v.abs() < gap { gap.copysign(v) + v } else { v })
        .collect();
    Tensor::new(dims.to_vec(), data).unwrap()
}

pub fn random_mask(r: &mut ChaCha8Rng, name: &str, dims: &[usize], keep: f64) -> LayerMask {
    let n: usize = dims.iter().product();
    let bits = (0..n).map(|_| u8::from(r.random::<f64>() < keep)).collect();
    LayerMask::from_bits(name, dims, bits).unwrap()
}

/// Maximum relative error between the tape's gradients for `leaves` and
/// central differences of the scalar produced by `graph`, over every
/// coordinate of every leaf.
pub fn op_gradient_error<'a>(
    leaves: &[Tensor],
    h: Float,
    graph: impl Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
) -> Result<Float> {
    let eval = |vals: &[Tensor]| -> Result<Float> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.input(t.clone(), false)).collect();
        let loss = graph(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.input(t.clone(), true)).collect();
    let loss = graph(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut worst: Float = 0.0;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zero(vars[k], leaf.len());
        for i in 0..leaf.len() {
            let mut probe = leaves.to_vec();
            probe[k].data_mut()[i] = leaf.data()[i] + h;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = leaf.data()[i] - h;
            let down = eval(&probe)?;
            worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}

/// Reduces an op output to a scalar: flatten, fixed random projection
/// scaled by `1/√width` so the loss stays O(1), mean cross-entropy.
pub fn scalar_head<'a>(tape: &mut Tape<'a>, v: Var, seed: u64) -> Result<Var> {
    let v = if tape.value(v).ndim() > 2 { tape.flatten(v)? } else { v };
    let dims = tape.value(v).dims().to_vec();
    let (batch, width) = (dims[0], dims[1]);
    let mut r = rng(seed);
    let classes = 3;
    let mut proj = normal_tensor(&mut r, &[classes, width]);
    let scale = (width as Float).sqrt().recip();
    proj.data_mut().iter_mut().for_each(|v| *v *= scale);
    let w = tape.input(proj, false);
    let b = tape.input(normal_tensor(&mut r, &[classes]), false);
    let logits = tape.linear(v, w, b, None)?;
    let labels: Vec<usize> = (0..batch).map(|i| (i + seed as usize) % classes).collect();
    tape.softmax_cross_entropy_indices(logits, &labels)
}

/// Per-layer densities from a bisection on the ERK scale `c`, solving
/// `Σ min(1, c·r_l)·d_l = density·Σ d_l` directly (caps fall out on their own).
/// Shapes are `(conv, n_in, n_out, k_h, k_w)`; linear layers score kernel-free.
pub fn erk_bisection(shapes: &[(bool, usize, usize, usize, usize)], density: f64) -> Vec<f64> {
    let r: Vec<f64> = shapes
        .iter()
        .map(|&(conv, i, o, kh, kw)| {
            if !conv {
                (i + o) as f64 / (i * o) as f64
            } else {
                (i + o + kh + kw) as f64 / (i * o * kh * kw) as f64
            }
        })
        .collect();
    let d: Vec<f64> = shapes.iter().map(|&(_, i, o, kh, kw)| (i * o * kh * kw) as f64).collect();
    let total: f64 = d.iter().sum();
    let alloc = |c: f64| -> f64 { r.iter().zip(&d).map(|(r, d)| (c * r).min(1.0) * d).sum() };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while alloc(hi) < density * total && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alloc(mid) < density * total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    r.iter().map(|r| (c * r).min(1.0)).collect()
}

/// Loop-based forward pass of one sample, written from the architecture
/// definition rather than the engine.
pub fn naive_logits(model: &Model, masks: Option<&MaskSet>, x: &[Float]) -> Vec<f64> {
    let spec = model.spec();
    let mut dims: Vec<usize> = spec.input_dims.clone();
    let mut h: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let weight = |l: usize| -> Vec<f64> {
        let w = model.layers()[l].weight.data();
        match masks {
            Some(m) => w
                .iter()
                .zip(m.layer(l).bits())
                .map(|(&v, &b)| if b == 1 { v as f64 } else { 0.0 })
                .collect(),
            None => w.iter().map(|&v| v as f64).collect(),
        }
    };
    for stage in &spec.stages {
        match *stage {
            Stage::Conv { layer, stride, padding } => {
                let ls = &spec.layers[layer];
                assert_eq!(ls.kind, LayerKind::Conv);
                let (cin, hh, ww) = (dims[0], dims[1] as isize, dims[2] as isize);
                let (kh, kw) = (ls.kernel_h as isize, ls.kernel_w as isize);
                let (s, p) = (stride as isize, padding as isize);
                let oh = (hh + 2 * p - kh) / s + 1;
                let ow = (ww + 2 * p - kw) / s + 1;
                let w = weight(layer);
                let b = model.layers()[layer].bias.data();
                let mut out = vec![0.0; ls.fan_out * (oh * ow) as usize];
                for o in 0..ls.fan_out {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = b[o] as f64;
                            for c in 0..cin {
                                for u in 0..kh {
                                    for v in 0..kw {
                                        let (y, xx) = (i * s + u - p, j * s + v - p);
                                        if y < 0 || xx < 0 || y >= hh || xx >= ww {
                                            continue;
                                        }
                                        let wi = ((o * cin + c) as isize * kh + u) * kw + v;
                                        let xi = (c as isize * hh + y) * ww + xx;
                                        acc += w[wi as usize] * h[xi as usize];
                                    }
                                }
                            }
                            out[(o as isize * oh * ow + i * ow + j) as usize] = acc;
                        }
                    }
                }
                h = out;
                dims = vec![ls.fan_out, oh as usize, ow as usize];
            }
            Stage::Linear { layer } => {
                let ls = &spec.layers[layer];
                let w = weight(layer);
                let b = model.layers()[layer].bias.data();
                h = (0..ls.fan_out)
                    .map(|o| b[o] as f64 + (0..ls.fan_in).map(|i| w[o * ls.fan_in + i] * h[i]).sum::<f64>())
                    .collect();
                dims = vec![ls.fan_out];
            }
            Stage::Relu => h.iter_mut().for_each(|v| *v = v.max(0.0)),
            Stage::MaxPool { k, stride } | Stage::AvgPool { k, stride } => {
                let is_max = matches!(stage, Stage::MaxPool { .. });
                let (c, hh, ww) = (dims[0], dims[1], dims[2]);
                let (oh, ow) = ((hh - k) / stride + 1, (ww - k) / stride + 1);
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let window = (0..k)
                                .flat_map(|u| (0..k).map(move |v| (u, v)))
                                .map(|(u, v)| h[(ch * hh + i * stride + u) * ww + j * stride + v]);
                            out.push(if is_max {
                                window.fold(f64::NEG_INFINITY, f64::max)
                            } else {
                                window.sum::<f64>() / (k * k) as f64
                            });
                        }
                    }
                }
                h = out;
                dims = vec![c, oh, ow];
            }
            Stage::Flatten => dims = vec![h.len()],
        }
    }
    h
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn el2n_oracle(logits: &[f64], label: usize) -> f64 {
    softmax(logits)
        .iter()
        .enumerate()
        .map(|(c, p)| {
            let t = if c == label { 1.0 } else { 0.0 };
            (p - t) * (p - t)
        })
        .sum::<f64>()
        .sqrt()
}

/// Forward FLOPs per sample recomputed from stage shapes: 2·MACs·density per
/// maskable layer, one per output element of ReLU and pooling.
pub fn forward_flops_oracle(model: &Model, densities: &[f64]) -> f64 {
    let spec = model.spec();
    let mut dims = spec.input_dims.clone();
    let mut total = 0.0;
    for stage in &spec.stages {
        match *stage {
            Stage::Conv { layer, stride, padding } => {
                let l = &spec.layers[layer];
                let oh = (dims[1] + 2 * padding - l.kernel_h) / stride + 1;
                let ow = (dims[2] + 2 * padding - l.kernel_w) / stride + 1;
                total += 2.0 * (l.fan_in * l.fan_out * l.kernel_h * l.kernel_w * oh * ow) as f64 * densities[layer];
                dims = vec![l.fan_out, oh, ow];
            }
            Stage::Linear { layer } => {
                let l = &spec.layers[layer];
                total += 2.0 * (l.fan_in * l.fan_out) as f64 * densities[layer];
                dims = vec![l.fan_out];
            }
            Stage::Relu => total += dims.iter().product::<usize>() as f64,
            Stage::MaxPool { k, stride } | Stage::AvgPool { k, stride } => {
                dims = vec![dims[0], (dims[1] - k) / stride + 1, (dims[2] - k) / stride + 1];
                total += dims.iter().product::<usize>() as f64;
            }
            Stage::Flatten => dims = vec![dims.iter().product()],
        }
    }
    total
}

/// Training FLOPs of `epochs` passes over `n` samples in batches of `batch`
/// at fixed per-layer densities.
pub fn training_flops_oracle(model: &Model, densities: &[f64], n: usize, batch: usize, epochs: usize) -> f64 {
    let per_sample = forward_flops_oracle(model, densities);
    let mut per_epoch = 0.0;
    let mut start = 0;
    while start < n {
        let b = batch.min(n - start);
        per_epoch += 3.0 * per_sample * b as f64;
        start += b;
    }
    per_epoch * epochs as f64
}
