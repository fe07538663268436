//! FLOPs accounting. Convention: a multiply-accumulate is 2 FLOPs, masked
//! weights cost nothing, ReLU and pooling cost 1 FLOP per output element, and
//! a training step costs 3× the forward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec, ModelSpec, Stage};
use crate::sparsity::MaskSet;

/// Forward FLOPs of one maskable layer for a single sample.
pub fn layer_forward_flops(layer: &LayerSpec, density: f64) -> f64 {
    let macs = match layer.kind {
        LayerKind::Linear => (layer.fan_in * layer.fan_out) as f64,
        LayerKind::Conv => {
            (layer.fan_in * layer.fan_out * layer.kernel_h * layer.kernel_w * layer.out_h * layer.out_w) as f64
        }
    };
    2.0 * macs * density
}

pub fn flops_forward(spec: &ModelSpec, masks: Option<&MaskSet>, batch: usize) -> Result<f64> {
    if let Some(m) = masks {
        if m.len() != spec.layers.len() {
            return Err(Error::dim("mask count differs from layer count"));
        }
    }
    let density = |l: usize| masks.map_or(1.0, |m| m.layer(l).density() as f64);
    let mut total = 0.0;
    for (stage, dims) in spec.stages.iter().zip(&spec.stage_dims) {
        total += match *stage {
            Stage::Conv { layer, .. } | Stage::Linear { layer } => {
                layer_forward_flops(&spec.layers[layer], density(layer))
            }
            Stage::Relu | Stage::MaxPool { .. } | Stage::AvgPool { .. } => {
                dims.iter().product::<usize>() as f64
            }
            Stage::Flatten => 0.0,
        };
    }
    Ok(total * batch as f64)
}

/// Forward + backward-to-inputs + backward-to-weights.
pub fn flops_training_step(spec: &ModelSpec, masks: Option<&MaskSet>, batch: usize) -> Result<f64> {
    Ok(3.0 * flops_forward(spec, masks, batch)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    DensePretrain,
    SparseTrain,
    Retrain,
}

/// Cumulative training FLOPs by phase. `sparse_train` holds the main training
/// run of single-phase methods (dense included).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopsLedger {
    pub dense_pretrain: f64,
    pub sparse_train: f64,
    pub retrain: f64,
    /// Nonzero maskable weights at the final sparsity.
    pub final_params: usize,
}

impl FlopsLedger {
    pub fn add(&mut self, phase: Phase, flops: f64) -> Result<()> {
        if !(flops >= 0.0) || !flops.is_finite() {
            return Err(Error::input(format!("invalid FLOPs increment {flops}")));
        }
        *self.slot(phase) += flops;
        Ok(())
    }

    fn slot(&mut self, phase: Phase) -> &mut f64 {
        match phase {
            Phase::DensePretrain => &mut self.dense_pretrain,
            Phase::SparseTrain => &mut self.sparse_train,
            Phase::Retrain => &mut self.retrain,
        }
    }

    pub fn phase(&self, phase: Phase) -> f64 {
        match phase {
            Phase::DensePretrain => self.dense_pretrain,
            Phase::SparseTrain => self.sparse_train,
            Phase::Retrain => self.retrain,
        }
    }

    pub fn total(&self) -> f64 {
        self.dense_pretrain + self.sparse_train + self.retrain
    }

    /// Flat JSON object: the three phases, `total` and `final_params`.
    pub fn to_json(&self) -> String {
        let value = serde_json::json!({
            "dense_pretrain": self.dense_pretrain,
            "sparse_train": self.sparse_train,
            "retrain": self.retrain,
            "total": self.total(),
            "final_params": self.final_params,
        });
        serde_json::to_string_pretty(&value).expect("ledger serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::input(format!("bad flops json: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mlp_spec, miniconvnet_spec};
    use crate::sparsity::LayerMask;

    #[test]
    fn linear_half_density() {
        let spec = mlp_spec(&[4], &[], 8).unwrap();
        let mut mask = LayerMask::ones("fc1", &[8, 4]);
        for i in 0..16 {
            mask.set(i, false);
        }
        let masks = MaskSet::new(vec![mask]);
        assert_eq!(flops_forward(&spec, Some(&masks), 1).unwrap(), 32.0);
        assert_eq!(flops_training_step(&spec, Some(&masks), 2).unwrap(), 192.0);
    }

    #[test]
    fn conv_layer_formula() {
        let layer = LayerSpec {
            name: "c".into(),
            kind: LayerKind::Conv,
            fan_in: 1,
            fan_out: 1,
            kernel_h: 3,
            kernel_w: 3,
            param_count: 9,
            out_h: 6,
            out_w: 6,
        };
        assert_eq!(layer_forward_flops(&layer, 1.0), 648.0);
        assert_eq!(layer_forward_flops(&layer, 0.0), 0.0);
    }

    #[test]
    fn miniconvnet_dense_forward() {
        let spec = miniconvnet_spec([1, 8, 8], &[8], 3, 2).unwrap();
        // conv 2*1*8*9*64, relu 8*64, pool 8*16, fc 2*128*2
        let want = 2.0 * 72.0 * 64.0 + 512.0 + 128.0 + 2.0 * 256.0;
        assert_eq!(flops_forward(&spec, None, 1).unwrap(), want);
        assert_eq!(flops_forward(&spec, Some(&spec.full_masks()), 1).unwrap(), want);
    }

    #[test]
    fn ledger_totals_and_json() {
        let mut l = FlopsLedger::default();
        l.add(Phase::DensePretrain, 10.0).unwrap();
        l.add(Phase::Retrain, 5.0).unwrap();
        assert!(l.add(Phase::Retrain, -1.0).is_err());
        assert_eq!(l.total(), 15.0);
        let back = FlopsLedger::from_json(&l.to_json()).unwrap();
        assert_eq!(back, l);
        assert!(l.to_json().contains("\"total\": 15.0"));
    }
}
