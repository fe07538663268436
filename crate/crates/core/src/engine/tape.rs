//! Reverse-mode differentiation over a linear tape.
//!
//! Forward values are computed eagerly as operations are recorded. Parameters
//! are borrowed for the lifetime of the tape, so gradients come back as a
//! separate [`Gradients`] table rather than being written into the tensors.

use crate::engine::gemm::{gemm, View};
use crate::error::{Error, Result};
use crate::sparsity::LayerMask;
use crate::tensor::{Float, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

impl Value<'_> {
    fn tensor(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

enum Op<'a> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
        mask: Option<&'a LayerMask>,
        w_eff: Option<Vec<Float>>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        mask: Option<&'a LayerMask>,
        w_eff: Option<Vec<Float>>,
        cols: Vec<Float>,
        geom: ConvGeom,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        k: usize,
        stride: usize,
    },
    Flatten {
        x: Var,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<Float>,
    },
}

struct Node<'a> {
    value: Value<'a>,
    op: Op<'a>,
    needs_grad: bool,
}

/// Recorded computation. Backward replays nodes in reverse recording order.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Owned leaf, e.g. an input batch. `requires_grad` requests ∂L/∂x.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Value::Owned(value), Op::Leaf, requires_grad)
    }

    /// Borrowed trainable leaf.
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.push(Value::Borrowed(value), Op::Leaf, true)
    }

    /// Borrowed leaf that receives no gradient.
    pub fn constant(&mut self, value: &'a Tensor) -> Var {
        self.push(Value::Borrowed(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.tensor()
    }

    /// Softmax probabilities retained by a cross-entropy node.
    pub fn probs(&self, loss: Var) -> Option<&[Float]> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxCe { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, value: Value<'a>, op: Op<'a>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_checked(&mut self, name: &str, out: Tensor, op: Op<'a>, needs: bool) -> Result<Var> {
        if !out.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        Ok(self.push(Value::Owned(out), op, needs))
    }

    /// `y = x (w ⊙ M)^T + b` for `x: [B, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var, mask: Option<&'a LayerMask>) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        if xt.ndim() != 2 || wt.ndim() != 2 || bt.ndim() != 1 {
            return Err(Error::dim("linear expects x [B,in], w [out,in], b [out]"));
        }
        let (batch, fan_in) = (xt.dims()[0], xt.dims()[1]);
        let fan_out = wt.dims()[0];
        if wt.dims()[1] != fan_in || bt.dims()[0] != fan_out {
            return Err(Error::dim(format!(
                "linear shapes x {:?}, w {:?}, b {:?} disagree",
                xt.dims(),
                wt.dims(),
                bt.dims()
            )));
        }
        let w_eff = masked_weights(wt, mask)?;
        let weights = w_eff.as_deref().unwrap_or(wt.data());
        let mut out = vec![0.0; batch * fan_out];
        for row in out.chunks_mut(fan_out) {
            row.copy_from_slice(bt.data());
        }
        gemm(
            batch,
            fan_in,
            fan_out,
            View::rows(xt.data(), fan_in),
            View::transposed(weights, fan_in),
            1.0,
            &mut out,
        );
        let out = Tensor::new(vec![batch, fan_out], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push_checked(
            "linear",
            out,
            Op::Linear {
                x,
                w,
                b,
                mask,
                w_eff,
            },
            needs,
        )
    }

    /// Cross-correlation of `x: [B, Cin, H, W]` with `w ⊙ M: [Cout, Cin, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
        mask: Option<&'a LayerMask>,
    ) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        if xt.ndim() != 4 || wt.ndim() != 4 || bt.ndim() != 1 {
            return Err(Error::dim("conv2d expects x [B,C,H,W], w [O,C,kh,kw], b [O]"));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d stride must be positive"));
        }
        let [batch, cin, h, wd] = [xt.dims()[0], xt.dims()[1], xt.dims()[2], xt.dims()[3]];
        let [cout, wcin, kh, kw] = [wt.dims()[0], wt.dims()[1], wt.dims()[2], wt.dims()[3]];
        if wcin != cin || bt.dims()[0] != cout {
            return Err(Error::dim(format!(
                "conv2d shapes x {:?}, w {:?}, b {:?} disagree",
                xt.dims(),
                wt.dims(),
                bt.dims()
            )));
        }
        let oh = conv_out_size(h, kh, stride, padding)?;
        let ow = conv_out_size(wd, kw, stride, padding)?;
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
            oh,
            ow,
        };
        let w_eff = masked_weights(wt, mask)?;
        let weights = w_eff.as_deref().unwrap_or(wt.data());
        let cols = im2col(xt.data(), &geom);
        let (k, p) = (geom.k(), geom.p());
        let bp = batch * p;
        let mut tmp = vec![0.0; cout * bp];
        gemm(cout, k, bp, View::rows(weights, k), View::rows(&cols, bp), 0.0, &mut tmp);
        let mut out = vec![0.0; batch * cout * p];
        for bi in 0..batch {
            for co in 0..cout {
                let bias = bt.data()[co];
                let src = &tmp[co * bp + bi * p..co * bp + (bi + 1) * p];
                let dst = &mut out[(bi * cout + co) * p..(bi * cout + co + 1) * p];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias;
                }
            }
        }
        let out = Tensor::new(vec![batch, cout, oh, ow], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push_checked(
            "conv2d",
            out,
            Op::Conv2d {
                x,
                w,
                b,
                mask,
                w_eff,
                cols,
                geom,
            },
            needs,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let out = Tensor::new(xt.dims().to_vec(), data)?;
        let needs = self.needs(x);
        self.push_checked("relu", out, Op::Relu { x }, needs)
    }

    /// Max pooling without padding; ties resolve to the first maximum in
    /// row-major window order.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let xt = self.value(x);
        let (b, c, h, w, oh, ow) = pool_geometry(xt, k, stride)?;
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        let data = xt.data();
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = Float::NEG_INFINITY;
                    let mut best_i = 0;
                    for i in 0..k {
                        for j in 0..k {
                            let idx = base + (oy * stride + i) * w + ox * stride + j;
                            if data[idx] > best {
                                best = data[idx];
                                best_i = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        let out = Tensor::new(vec![b, c, oh, ow], out)?;
        let needs = self.needs(x);
        self.push_checked("max_pool2d", out, Op::MaxPool { x, argmax }, needs)
    }

    pub fn avg_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let xt = self.value(x);
        let (b, c, h, w, oh, ow) = pool_geometry(xt, k, stride)?;
        let scale = 1.0 / (k * k) as Float;
        let data = xt.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            s += data[base + (oy * stride + i) * w + ox * stride + j];
                        }
                    }
                    out.push(s * scale);
                }
            }
        }
        let out = Tensor::new(vec![b, c, oh, ow], out)?;
        let needs = self.needs(x);
        self.push_checked("avg_pool2d", out, Op::AvgPool { x, k, stride }, needs)
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let b = xt.dims()[0];
        let rest = xt.len() / b;
        let out = xt.clone().reshape(&[b, rest])?;
        let needs = self.needs(x);
        self.push_checked("flatten", out, Op::Flatten { x }, needs)
    }

    /// Mean softmax cross-entropy against one-hot `labels: [B, C]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &Tensor) -> Result<Var> {
        let lt = self.value(logits);
        if lt.ndim() != 2 || labels.dims() != lt.dims() {
            return Err(Error::dim(format!(
                "logits {:?} and labels {:?} must both be [B, C]",
                lt.dims(),
                labels.dims()
            )));
        }
        let (b, c) = (lt.dims()[0], lt.dims()[1]);
        if c < 2 {
            return Err(Error::input("cross-entropy needs at least 2 classes"));
        }
        let mut targets = Vec::with_capacity(b);
        for row in labels.data().chunks(c) {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != c - 1 {
                return Err(Error::input("labels must be one-hot rows"));
            }
            targets.push(row.iter().position(|&v| v == 1.0).unwrap_or(0));
        }
        self.cross_entropy_with_targets(logits, targets)
    }

    /// Same as [`Tape::softmax_cross_entropy`] with integer class ids.
    pub fn softmax_cross_entropy_indices(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lt = self.value(logits);
        if lt.ndim() != 2 || lt.dims()[0] != labels.len() {
            return Err(Error::dim("logits must be [B, C] with B labels"));
        }
        let c = lt.dims()[1];
        if c < 2 {
            return Err(Error::input("cross-entropy needs at least 2 classes"));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::input(format!("label {y} out of range for {c} classes")));
        }
        self.cross_entropy_with_targets(logits, labels.to_vec())
    }

    fn cross_entropy_with_targets(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        let lt = self.value(logits);
        let c = lt.dims()[1];
        let b = targets.len();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (i, row) in lt.data().chunks(c).enumerate() {
            let m = row.iter().cloned().fold(Float::NEG_INFINITY, Float::max);
            let mut z = 0.0;
            for (p, &v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - m).exp();
                z += *p;
            }
            probs[i * c..(i + 1) * c].iter_mut().for_each(|p| *p /= z);
            loss += z.ln() + m - row[targets[i]];
        }
        let out = Tensor::scalar(loss / b as Float);
        let needs = self.needs(logits);
        self.push_checked(
            "softmax_cross_entropy",
            out,
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
            },
            needs,
        )
    }

    /// Propagates d(loss)/d(loss) = 1 back through the tape. Nodes that do not
    /// influence `loss` get no entry; [`Gradients::get_or_zero`] fills zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<Float>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => grads[id] = Some(g),
                Op::Linear {
                    x,
                    w,
                    b,
                    mask,
                    w_eff,
                } => {
                    let xt = self.value(*x);
                    let wt = self.value(*w);
                    let (batch, fan_in) = (xt.dims()[0], xt.dims()[1]);
                    let fan_out = wt.dims()[0];
                    let weights = w_eff.as_deref().unwrap_or(wt.data());
                    if self.needs(*x) {
                        let mut dx = vec![0.0; batch * fan_in];
                        gemm(
                            batch,
                            fan_out,
                            fan_in,
                            View::rows(&g, fan_out),
                            View::rows(weights, fan_in),
                            0.0,
                            &mut dx,
                        );
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        let mut dw = vec![0.0; fan_out * fan_in];
                        gemm(
                            fan_out,
                            batch,
                            fan_in,
                            View::transposed(&g, fan_out),
                            View::rows(xt.data(), fan_in),
                            0.0,
                            &mut dw,
                        );
                        apply_mask(&mut dw, *mask);
                        accumulate(&mut grads, *w, dw);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0.0; fan_out];
                        for row in g.chunks(fan_out) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    mask,
                    w_eff,
                    cols,
                    geom,
                } => {
                    let wt = self.value(*w);
                    let weights = w_eff.as_deref().unwrap_or(wt.data());
                    let (k, p) = (geom.k(), geom.p());
                    let bp = geom.batch * p;
                    let cout = geom.cout;
                    let mut gt = vec![0.0; cout * bp];
                    for bi in 0..geom.batch {
                        for co in 0..cout {
                            let src = &g[(bi * cout + co) * p..(bi * cout + co + 1) * p];
                            gt[co * bp + bi * p..co * bp + (bi + 1) * p].copy_from_slice(src);
                        }
                    }
                    if self.needs(*w) {
                        let mut dw = vec![0.0; cout * k];
                        gemm(
                            cout,
                            bp,
                            k,
                            View::rows(&gt, bp),
                            View::transposed(cols, bp),
                            0.0,
                            &mut dw,
                        );
                        apply_mask(&mut dw, *mask);
                        accumulate(&mut grads, *w, dw);
                    }
                    if self.needs(*b) {
                        let db = gt.chunks(bp).map(|row| row.iter().sum()).collect();
                        accumulate(&mut grads, *b, db);
                    }
                    if self.needs(*x) {
                        let mut dcols = vec![0.0; k * bp];
                        gemm(
                            k,
                            cout,
                            bp,
                            View::transposed(weights, k),
                            View::rows(&gt, bp),
                            0.0,
                            &mut dcols,
                        );
                        accumulate(&mut grads, *x, col2im(&dcols, geom));
                    }
                }
                Op::Relu { x } => {
                    let xt = self.value(*x);
                    let dx = xt
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    for (&i, gv) in argmax.iter().zip(&g) {
                        dx[i] += gv;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::AvgPool { x, k, stride } => {
                    let xt = self.value(*x);
                    let (h, w) = (xt.dims()[2], xt.dims()[3]);
                    let out = node.value.tensor();
                    let (oh, ow) = (out.dims()[2], out.dims()[3]);
                    let planes = xt.dims()[0] * xt.dims()[1];
                    let scale = 1.0 / (k * k) as Float;
                    let mut dx = vec![0.0; xt.len()];
                    for plane in 0..planes {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[(plane * oh + oy) * ow + ox] * scale;
                                for i in 0..*k {
                                    for j in 0..*k {
                                        dx[plane * h * w + (oy * stride + i) * w + ox * stride + j] +=
                                            gv;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Flatten { x } => accumulate(&mut grads, *x, g),
                Op::SoftmaxCe {
                    logits,
                    targets,
                    probs,
                } => {
                    let c = probs.len() / targets.len();
                    let scale = g[0] / targets.len() as Float;
                    let mut dl: Vec<Float> = probs.iter().map(|p| p * scale).collect();
                    for (i, &t) in targets.iter().enumerate() {
                        dl[i * c + t] -= scale;
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        // Interior entries were consumed by the sweep; only leaves remain.
        if grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backward".into()));
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of leaf values produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<Float>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[Float]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when `v` did not influence the loss.
    pub fn get_or_zero(&self, v: Var, len: usize) -> Vec<Float> {
        self.get(v).map(<[Float]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<Float>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(grads: &mut [Option<Vec<Float>>], v: Var, g: Vec<Float>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn masked_weights(w: &Tensor, mask: Option<&LayerMask>) -> Result<Option<Vec<Float>>> {
    let Some(mask) = mask else { return Ok(None) };
    if mask.dims() != w.dims() {
        return Err(Error::dim(format!(
            "mask dims {:?} differ from weight dims {:?}",
            mask.dims(),
            w.dims()
        )));
    }
    Ok(Some(
        w.data()
            .iter()
            .zip(mask.bits())
            .map(|(&v, &m)| if m != 0 { v } else { 0.0 })
            .collect(),
    ))
}

fn apply_mask(g: &mut [Float], mask: Option<&LayerMask>) {
    if let Some(mask) = mask {
        for (v, &m) in g.iter_mut().zip(mask.bits()) {
            if m == 0 {
                *v = 0.0;
            }
        }
    }
}

fn conv_out_size(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = n + 2 * pad;
    if span < k || (span - k) % stride != 0 {
        return Err(Error::dim(format!(
            "conv output size ({n} + 2*{pad} - {k})/{stride} + 1 is not a positive integer"
        )));
    }
    Ok((span - k) / stride + 1)
}

fn pool_geometry(
    x: &Tensor,
    k: usize,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if x.ndim() != 4 {
        return Err(Error::dim("pooling expects [B, C, H, W]"));
    }
    if k == 0 || stride == 0 {
        return Err(Error::dim("pool window and stride must be positive"));
    }
    let d = x.dims();
    if d[2] < k || d[3] < k {
        return Err(Error::dim(format!("pool window {k} exceeds input {:?}", d)));
    }
    let oh = (d[2] - k) / stride + 1;
    let ow = (d[3] - k) / stride + 1;
    Ok((d[0], d[1], d[2], d[3], oh, ow))
}

/// Unfolds `x` into `[Cin*kh*kw, B*oh*ow]`.
fn im2col(x: &[Float], g: &ConvGeom) -> Vec<Float> {
    let (k, p) = (g.k(), g.p());
    let bp = g.batch * p;
    let mut cols = vec![0.0; k * bp];
    for c in 0..g.cin {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * bp..(row + 1) * bp];
                for b in 0..g.batch {
                    let plane = &x[(b * g.cin + c) * g.h * g.w..(b * g.cin + c + 1) * g.h * g.w];
                    for oy in 0..g.oh {
                        let y = (oy * g.stride + i) as isize - g.pad as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        let src_row = &plane[y as usize * g.w..(y as usize + 1) * g.w];
                        let out_row = &mut dst[b * p + oy * g.ow..b * p + (oy + 1) * g.ow];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let xx = (ox * g.stride + j) as isize - g.pad as isize;
                            if xx >= 0 && xx < g.w as isize {
                                *o = src_row[xx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[Float], g: &ConvGeom) -> Vec<Float> {
    let p = g.p();
    let bp = g.batch * p;
    let mut x = vec![0.0; g.batch * g.cin * g.h * g.w];
    for c in 0..g.cin {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * bp..(row + 1) * bp];
                for b in 0..g.batch {
                    let base = (b * g.cin + c) * g.h * g.w;
                    for oy in 0..g.oh {
                        let y = (oy * g.stride + i) as isize - g.pad as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        for ox in 0..g.ow {
                            let xx = (ox * g.stride + j) as isize - g.pad as isize;
                            if xx >= 0 && xx < g.w as isize {
                                x[base + y as usize * g.w + xx as usize] += src[b * p + oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}
