use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Binary mask over one weight tensor, one byte per element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    name: String,
    dims: Vec<usize>,
    bits: Vec<u8>,
}

impl LayerMask {
    pub fn ones(name: impl Into<String>, dims: &[usize]) -> Self {
        Self::filled(name, dims, 1)
    }

    pub fn zeros(name: impl Into<String>, dims: &[usize]) -> Self {
        Self::filled(name, dims, 0)
    }

    fn filled(name: impl Into<String>, dims: &[usize], v: u8) -> Self {
        LayerMask {
            name: name.into(),
            dims: dims.to_vec(),
            bits: vec![v; dims.iter().product()],
        }
    }

    pub fn from_bits(name: impl Into<String>, dims: &[usize], bits: Vec<u8>) -> Result<Self> {
        if bits.len() != dims.iter().product::<usize>() {
            return Err(Error::dim(format!(
                "mask of {} bits for dims {dims:?}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::input("mask bits must be 0 or 1"));
        }
        Ok(LayerMask {
            name: name.into(),
            dims: dims.to_vec(),
            bits,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i] != 0
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.bits[i] = on as u8;
    }

    pub fn nonzero_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn density(&self) -> Float {
        self.nonzero_count() as Float / self.len() as Float
    }

    /// Zeroes every masked-out element of `values`.
    pub fn apply(&self, values: &mut [Float]) {
        for (v, &m) in values.iter_mut().zip(&self.bits) {
            if m == 0 {
                *v = 0.0;
            }
        }
    }

    pub fn apply_to(&self, t: &mut Tensor) -> Result<()> {
        if t.dims() != self.dims.as_slice() {
            return Err(Error::dim(format!(
                "mask {:?} applied to tensor {:?}",
                self.dims,
                t.dims()
            )));
        }
        self.apply(t.data_mut());
        Ok(())
    }
}

/// One mask per maskable layer, in network order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    masks: Vec<LayerMask>,
}

impl MaskSet {
    pub fn new(masks: Vec<LayerMask>) -> Self {
        MaskSet { masks }
    }

    pub fn masks(&self) -> &[LayerMask] {
        &self.masks
    }

    pub fn masks_mut(&mut self) -> &mut [LayerMask] {
        &mut self.masks
    }

    pub fn layer(&self, l: usize) -> &LayerMask {
        &self.masks[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut LayerMask {
        &mut self.masks[l]
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.masks.iter().map(LayerMask::len).sum()
    }

    pub fn nonzero_count(&self) -> usize {
        self.masks.iter().map(LayerMask::nonzero_count).sum()
    }

    pub fn per_layer_nonzeros(&self) -> Vec<usize> {
        self.masks.iter().map(LayerMask::nonzero_count).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LayerMask> {
        self.masks.iter()
    }
}

/// `s = 1 − Σ‖M_l‖₀ / Σ d_l`.
pub fn global_sparsity(masks: &MaskSet) -> Float {
    let total = masks.total_params();
    if total == 0 {
        return 0.0;
    }
    1.0 - masks.nonzero_count() as Float / total as Float
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(layers: &[&[u8]]) -> MaskSet {
        MaskSet::new(
            layers
                .iter()
                .enumerate()
                .map(|(i, b)| LayerMask::from_bits(format!("l{i}"), &[b.len()], b.to_vec()).unwrap())
                .collect(),
        )
    }

    #[test]
    fn sparsity_of_small_masks() {
        assert_eq!(global_sparsity(&set(&[&[1, 1, 0, 0], &[1, 0]])), 0.5);
        assert_eq!(global_sparsity(&set(&[&[1, 1, 1], &[1]])), 0.0);
    }

    #[test]
    fn sparsity_counts_seven_of_twenty_four() {
        let mut bits = vec![0u8; 24];
        for i in [0, 3, 5, 8, 13, 21, 23] {
            bits[i] = 1;
        }
        let s = global_sparsity(&set(&[&bits[..10], &bits[10..]]));
        assert!((s - 17.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn from_bits_validates() {
        assert!(LayerMask::from_bits("a", &[2, 2], vec![1, 0, 1]).is_err());
        assert!(LayerMask::from_bits("a", &[2], vec![2, 0]).is_err());
    }

    #[test]
    fn apply_zeroes_masked() {
        let m = LayerMask::from_bits("a", &[3], vec![1, 0, 1]).unwrap();
        let mut v = [1.0, 2.0, 3.0];
        m.apply(&mut v);
        assert_eq!(v, [1.0, 0.0, 3.0]);
    }
}
