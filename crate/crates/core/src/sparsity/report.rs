use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec};
use crate::sparsity::MaskSet;
use crate::tensor::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityRow {
    pub index: usize,
    pub name: String,
    pub kind: LayerKind,
    pub params: usize,
    pub nonzeros: usize,
    pub density: Float,
}

/// Per-layer proportion of nonzero weights.
pub fn density_report(masks: &MaskSet, layers: &[LayerSpec]) -> Result<Vec<DensityRow>> {
    if masks.len() != layers.len() {
        return Err(Error::dim(format!(
            "{} masks for {} layers",
            masks.len(),
            layers.len()
        )));
    }
    layers
        .iter()
        .zip(masks.iter())
        .enumerate()
        .map(|(index, (l, m))| {
            if m.len() != l.param_count {
                return Err(Error::dim(format!("mask for {} has wrong size", l.name)));
            }
            let nonzeros = m.nonzero_count();
            Ok(DensityRow {
                index,
                name: l.name.clone(),
                kind: l.kind,
                params: l.param_count,
                nonzeros,
                density: nonzeros as Float / l.param_count as Float,
            })
        })
        .collect()
}

/// CSV with header `layer,kind,params,nonzeros,density`.
pub fn density_csv(rows: &[DensityRow]) -> String {
    let mut out = String::from("layer,kind,params,nonzeros,density\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            r.name,
            r.kind.as_str(),
            r.params,
            r.nonzeros,
            r.density
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::miniconvnet_spec;
    use crate::sparsity::global_sparsity;

    #[test]
    fn full_masks_are_dense() {
        let spec = miniconvnet_spec([1, 8, 8], &[4, 8], 3, 10).unwrap();
        let rows = density_report(&spec.full_masks(), &spec.layers).unwrap();
        assert!(rows.iter().all(|r| r.density == 1.0));
        let csv = density_csv(&rows);
        assert!(csv.starts_with("layer,kind,params,nonzeros,density\nconv1,conv,36,36,1.000000\n"));
    }

    #[test]
    fn rows_reconcile_with_global_sparsity() {
        let spec = miniconvnet_spec([1, 8, 8], &[4], 3, 3).unwrap();
        let mut masks = spec.full_masks();
        for i in (0..36).step_by(3) {
            masks.layer_mut(0).set(i, false);
        }
        masks.layer_mut(1).set(5, false);
        let rows = density_report(&masks, &spec.layers).unwrap();
        let nz: usize = rows.iter().map(|r| r.nonzeros).sum();
        let total: usize = rows.iter().map(|r| r.params).sum();
        assert_eq!(1.0 - nz as Float / total as Float, global_sparsity(&masks));
    }
}
