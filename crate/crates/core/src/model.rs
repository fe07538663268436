//! Desk-scale architectures: an MLP and a small conv net without
//! normalization or residual connections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::{Tape, Var};
use crate::error::{Error, Result};
use crate::sparsity::{LayerMask, MaskSet};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Linear,
    Conv,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Conv => "conv",
        }
    }
}

/// Shape of one maskable weight tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Input neurons or channels.
    pub fan_in: usize,
    /// Output neurons or channels.
    pub fan_out: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// Weight count `fan_in * fan_out * kernel_h * kernel_w`; biases excluded.
    pub param_count: usize,
    /// Spatial output size (1×1 for linear layers).
    pub out_h: usize,
    pub out_w: usize,
}

impl LayerSpec {
    pub fn weight_dims(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Linear => vec![self.fan_out, self.fan_in],
            LayerKind::Conv => vec![self.fan_out, self.fan_in, self.kernel_h, self.kernel_w],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Conv {
        layer: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        layer: usize,
    },
    Relu,
    MaxPool {
        k: usize,
        stride: usize,
    },
    AvgPool {
        k: usize,
        stride: usize,
    },
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Per-sample input dims, without the batch axis.
    pub input_dims: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    pub stages: Vec<Stage>,
    /// Per-sample output dims of every stage.
    pub stage_dims: Vec<Vec<usize>>,
}

impl ModelSpec {
    pub fn maskable_params(&self) -> usize {
        self.layers.iter().map(|l| l.param_count).sum()
    }

    pub fn full_masks(&self) -> MaskSet {
        MaskSet::new(
            self.layers
                .iter()
                .map(|l| LayerMask::ones(l.name.clone(), &l.weight_dims()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<LayerParams>,
}

/// Gradients for every layer's weight and bias, plus ∂L/∂x when requested.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub weights: Vec<Vec<Float>>,
    pub biases: Vec<Vec<Float>>,
    pub input: Option<Vec<Float>>,
}

/// A recorded forward pass; owns the tape.
pub struct ForwardPass<'a> {
    pub tape: Tape<'a>,
    pub input: Var,
    pub logits: Var,
    weights: Vec<Var>,
    biases: Vec<Var>,
    input_grad: bool,
}

impl ForwardPass<'_> {
    pub fn logits(&self) -> &Tensor {
        self.tape.value(self.logits)
    }

    pub fn loss(&mut self, labels: &[usize]) -> Result<Var> {
        self.tape.softmax_cross_entropy_indices(self.logits, labels)
    }

    pub fn backward(self, loss: Var) -> Result<ModelGrads> {
        let mut g = self.tape.backward(loss)?;
        let weights = self
            .weights
            .iter()
            .map(|&v| {
                let n = self.tape.value(v).len();
                g.take(v).unwrap_or_else(|| vec![0.0; n])
            })
            .collect();
        let biases = self
            .biases
            .iter()
            .map(|&v| {
                let n = self.tape.value(v).len();
                g.take(v).unwrap_or_else(|| vec![0.0; n])
            })
            .collect();
        let input = if self.input_grad {
            let n = self.tape.value(self.input).len();
            Some(g.take(self.input).unwrap_or_else(|| vec![0.0; n]))
        } else {
            None
        };
        Ok(ModelGrads {
            weights,
            biases,
            input,
        })
    }
}

impl Model {
    /// Builds a model from an explicit spec with He-normal weights and zero biases.
    pub fn from_spec(spec: ModelSpec, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let fan_in = l.fan_in * l.kernel_h * l.kernel_w;
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let dims = l.weight_dims();
                let weight = Tensor::from_fn(&dims, |_| normal.sample(&mut rng) as Float);
                LayerParams {
                    weight,
                    bias: Tensor::zeros(&[l.fan_out]),
                }
            })
            .collect();
        Model { spec, layers }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layer_shapes(&self) -> &[LayerSpec] {
        &self.spec.layers
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    /// Total trainable scalars, weights and biases.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn weight_slices(&self) -> Vec<&[Float]> {
        self.layers.iter().map(|l| l.weight.data()).collect()
    }

    /// Records a forward pass for a batch `x: [B, ...input_dims]`.
    pub fn forward<'a>(
        &'a self,
        x: Tensor,
        masks: Option<&'a MaskSet>,
        input_grad: bool,
    ) -> Result<ForwardPass<'a>> {
        self.record(x, masks, input_grad, true)
    }

    fn record<'a>(
        &'a self,
        x: Tensor,
        masks: Option<&'a MaskSet>,
        input_grad: bool,
        param_grad: bool,
    ) -> Result<ForwardPass<'a>> {
        if x.ndim() != self.spec.input_dims.len() + 1 || x.dims()[1..] != self.spec.input_dims[..] {
            return Err(Error::dim(format!(
                "model expects [B, {:?}], got {:?}",
                self.spec.input_dims,
                x.dims()
            )));
        }
        if let Some(m) = masks {
            if m.len() != self.layers.len() {
                return Err(Error::dim(format!(
                    "{} masks for {} layers",
                    m.len(),
                    self.layers.len()
                )));
            }
        }
        let mut tape = Tape::new();
        let input = tape.input(x, input_grad);
        let mut leaf = |t: &'a Tensor| {
            if param_grad {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        let weights: Vec<Var> = self.layers.iter().map(|l| leaf(&l.weight)).collect();
        let biases: Vec<Var> = self.layers.iter().map(|l| leaf(&l.bias)).collect();
        let mut h = input;
        for stage in &self.spec.stages {
            h = match *stage {
                Stage::Conv {
                    layer,
                    stride,
                    padding,
                } => tape.conv2d(
                    h,
                    weights[layer],
                    biases[layer],
                    stride,
                    padding,
                    masks.map(|m| m.layer(layer)),
                )?,
                Stage::Linear { layer } => {
                    tape.linear(h, weights[layer], biases[layer], masks.map(|m| m.layer(layer)))?
                }
                Stage::Relu => tape.relu(h)?,
                Stage::MaxPool { k, stride } => tape.max_pool2d(h, k, stride)?,
                Stage::AvgPool { k, stride } => tape.avg_pool2d(h, k, stride)?,
                Stage::Flatten => tape.flatten(h)?,
            };
        }
        Ok(ForwardPass {
            tape,
            input,
            logits: h,
            weights,
            biases,
            input_grad,
        })
    }

    pub fn predict(&self, x: Tensor, masks: Option<&MaskSet>) -> Result<Tensor> {
        let pass = self.forward(x, masks, false)?;
        Ok(pass.tape.value(pass.logits).clone())
    }

    /// Mean cross-entropy and its gradients on one batch.
    pub fn loss_and_grads(
        &self,
        x: Tensor,
        labels: &[usize],
        masks: Option<&MaskSet>,
    ) -> Result<(Float, ModelGrads)> {
        let mut pass = self.forward(x, masks, false)?;
        let loss = pass.loss(labels)?;
        let value = pass.tape.value(loss).item();
        Ok((value, pass.backward(loss)?))
    }

    /// Mean cross-entropy and ∂L/∂x only; parameters are treated as constants.
    pub fn input_gradient(
        &self,
        x: Tensor,
        labels: &[usize],
        masks: Option<&MaskSet>,
    ) -> Result<(Float, Vec<Float>)> {
        let mut pass = self.record(x, masks, true, false)?;
        let loss = pass.loss(labels)?;
        let value = pass.tape.value(loss).item();
        let grads = pass.backward(loss)?;
        Ok((value, grads.input.unwrap_or_default()))
    }

    /// Adds `grads` into each parameter's gradient slot. Repeated calls accumulate.
    pub fn accumulate_grads(&mut self, grads: &ModelGrads) -> Result<()> {
        for (l, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
            l.weight.accumulate_grad(gw)?;
            l.bias.accumulate_grad(gb)?;
        }
        Ok(())
    }

    /// One forward/backward on `(x, labels)`, accumulating into the grad slots.
    pub fn backward(&mut self, x: Tensor, labels: &[usize], masks: Option<&MaskSet>) -> Result<Float> {
        let (loss, grads) = self.loss_and_grads(x, labels, masks)?;
        self.accumulate_grads(&grads)?;
        Ok(loss)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weight.zero_grad();
            l.bias.zero_grad();
        }
    }

    /// Zeroes weights at masked-out positions.
    pub fn apply_masks(&mut self, masks: &MaskSet) -> Result<()> {
        for (l, m) in self.layers.iter_mut().zip(masks.iter()) {
            m.apply_to(&mut l.weight)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.all_finite() && l.bias.all_finite())
    }
}

/// Fully connected ReLU network: `input_dim -> hidden... -> classes`.
pub fn build_mlp(input_dim: usize, hidden_dims: &[usize], classes: usize, seed: u64) -> Result<Model> {
    Ok(Model::from_spec(mlp_spec(&[input_dim], hidden_dims, classes)?, seed))
}

/// MLP spec over arbitrary per-sample input dims (flattened first).
pub fn mlp_spec(input_dims: &[usize], hidden_dims: &[usize], classes: usize) -> Result<ModelSpec> {
    if input_dims.is_empty() || input_dims.iter().any(|&d| d == 0) || classes < 2 {
        return Err(Error::input("mlp needs positive input dims and at least 2 classes"));
    }
    if hidden_dims.contains(&0) {
        return Err(Error::input("hidden widths must be positive"));
    }
    let input_dim: usize = input_dims.iter().product();
    let mut stages = vec![Stage::Flatten];
    let mut stage_dims = vec![vec![input_dim]];
    let mut layers = Vec::new();
    let widths: Vec<usize> = hidden_dims.iter().copied().chain([classes]).collect();
    let mut fan_in = input_dim;
    for (i, &w) in widths.iter().enumerate() {
        layers.push(LayerSpec {
            name: format!("fc{}", i + 1),
            kind: LayerKind::Linear,
            fan_in,
            fan_out: w,
            kernel_h: 1,
            kernel_w: 1,
            param_count: fan_in * w,
            out_h: 1,
            out_w: 1,
        });
        stages.push(Stage::Linear { layer: i });
        stage_dims.push(vec![w]);
        if i + 1 < widths.len() {
            stages.push(Stage::Relu);
            stage_dims.push(vec![w]);
        }
        fan_in = w;
    }
    Ok(ModelSpec {
        input_dims: input_dims.to_vec(),
        classes,
        layers,
        stages,
        stage_dims,
    })
}

/// Conv(k×k, same padding) + ReLU + 2×2 max-pool per block, then a linear head.
pub fn build_miniconvnet(
    input_dims: [usize; 3],
    channels_per_block: &[usize],
    kernel: usize,
    classes: usize,
    seed: u64,
) -> Result<Model> {
    Ok(Model::from_spec(
        miniconvnet_spec(input_dims, channels_per_block, kernel, classes)?,
        seed,
    ))
}

pub fn miniconvnet_spec(
    input_dims: [usize; 3],
    channels_per_block: &[usize],
    kernel: usize,
    classes: usize,
) -> Result<ModelSpec> {
    let [c0, mut h, mut w] = input_dims;
    if c0 == 0 || h == 0 || w == 0 || classes < 2 {
        return Err(Error::input("miniconvnet needs positive input dims and at least 2 classes"));
    }
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::input("miniconvnet kernel must be odd"));
    }
    if channels_per_block.contains(&0) {
        return Err(Error::input("block channel counts must be positive"));
    }
    let pad = kernel / 2;
    let mut layers = Vec::new();
    let mut stages = Vec::new();
    let mut stage_dims = Vec::new();
    let mut cin = c0;
    for (i, &cout) in channels_per_block.iter().enumerate() {
        if h < 2 || w < 2 {
            return Err(Error::input(format!(
                "block {} has spatial size {h}x{w}, too small to pool",
                i + 1
            )));
        }
        layers.push(LayerSpec {
            name: format!("conv{}", i + 1),
            kind: LayerKind::Conv,
            fan_in: cin,
            fan_out: cout,
            kernel_h: kernel,
            kernel_w: kernel,
            param_count: cin * cout * kernel * kernel,
            out_h: h,
            out_w: w,
        });
        stages.push(Stage::Conv {
            layer: i,
            stride: 1,
            padding: pad,
        });
        stage_dims.push(vec![cout, h, w]);
        stages.push(Stage::Relu);
        stage_dims.push(vec![cout, h, w]);
        h /= 2;
        w /= 2;
        stages.push(Stage::MaxPool { k: 2, stride: 2 });
        stage_dims.push(vec![cout, h, w]);
        cin = cout;
    }
    let flat = cin * h * w;
    stages.push(Stage::Flatten);
    stage_dims.push(vec![flat]);
    let head = layers.len();
    layers.push(LayerSpec {
        name: "fc".into(),
        kind: LayerKind::Linear,
        fan_in: flat,
        fan_out: classes,
        kernel_h: 1,
        kernel_w: 1,
        param_count: flat * classes,
        out_h: 1,
        out_w: 1,
    });
    stages.push(Stage::Linear { layer: head });
    stage_dims.push(vec![classes]);
    Ok(ModelSpec {
        input_dims: input_dims.to_vec(),
        classes,
        layers,
        stages,
        stage_dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_without_hidden_is_one_layer() {
        let m = build_mlp(8, &[], 4, 0).unwrap();
        assert_eq!(m.layer_shapes().len(), 1);
        assert_eq!(m.param_count(), 8 * 4 + 4);
    }

    #[test]
    fn mlp_layer_param_counts() {
        let m = build_mlp(8, &[16], 4, 0).unwrap();
        let d: Vec<usize> = m.layer_shapes().iter().map(|l| l.param_count).collect();
        assert_eq!(d, vec![128, 64]);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_miniconvnet([1, 8, 8], &[4, 8], 3, 10, 7).unwrap();
        let b = build_miniconvnet([1, 8, 8], &[4, 8], 3, 10, 7).unwrap();
        assert_eq!(a, b);
        let c = build_miniconvnet([1, 8, 8], &[4, 8], 3, 10, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn miniconvnet_first_layer_shape() {
        let m = build_miniconvnet([1, 8, 8], &[8], 3, 2, 0).unwrap();
        let l = &m.layer_shapes()[0];
        assert_eq!((l.fan_in, l.fan_out, l.kernel_h, l.kernel_w), (1, 8, 3, 3));
        assert_eq!(l.param_count, 72);
        let names: Vec<&str> = m.layer_shapes().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["conv1", "fc"]);
        assert_eq!(m.layer_shapes()[1].param_count, 8 * 4 * 4 * 2);
    }

    #[test]
    fn he_init_has_expected_scale() {
        let m = build_mlp(400, &[], 300, 3).unwrap();
        let w = m.layers()[0].weight.data();
        let var = w.iter().map(|v| v * v).sum::<Float>() / w.len() as Float;
        assert!((var - 2.0 / 400.0).abs() < 0.05 * 2.0 / 400.0);
        assert!(m.layers()[0].bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn forward_shapes_and_finiteness() {
        let m = build_miniconvnet([3, 8, 8], &[4, 6], 3, 5, 1).unwrap();
        let x = Tensor::from_fn(&[2, 3, 8, 8], |i| (i as Float * 0.37).sin().abs());
        let y = m.predict(x, None).unwrap();
        assert_eq!(y.dims(), &[2, 5]);
        assert!(y.all_finite());
        let mlp = build_mlp(12, &[7, 5], 3, 1).unwrap();
        let y = mlp.predict(Tensor::full(&[4, 12], 0.5), None).unwrap();
        assert_eq!(y.dims(), &[4, 3]);
    }

    #[test]
    fn identity_kernel_mixes_channels_only() {
        let mut m = build_miniconvnet([2, 4, 4], &[2], 1, 2, 0).unwrap();
        // 1x1 kernel = identity across channels.
        m.layers_mut()[0]
            .weight
            .data_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| i as Float / 32.0);
        let mut tape = Tape::new();
        let xv = tape.input(x.clone(), false);
        let w = tape.param(&m.layers()[0].weight);
        let b = tape.param(&m.layers()[0].bias);
        let y = tape.conv2d(xv, w, b, 1, 0, None).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn rejects_wrong_input_dims() {
        let m = build_mlp(4, &[], 2, 0).unwrap();
        assert!(m.predict(Tensor::zeros(&[1, 5]), None).is_err());
    }
}
