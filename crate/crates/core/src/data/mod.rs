//! Datasets and the hard-sample pipelines: EL2N scoring and filtering,
//! subsampling, common corruptions and PGD perturbations.

mod corrupt;
mod el2n;
mod io;
mod pgd;
mod select;
mod synth;

use std::fmt;
use std::path::Path;

pub use corrupt::{
    corrupt, defocus_kernel, CorruptionKind, CorruptionSpec, DEFOCUS_RADIUS, GAUSSIAN_SIGMA,
    IMPULSE_FRACTION,
};
pub use el2n::{el2n, el2n_score, read_scores_csv, scores_csv, ScoreRecord};
pub use io::{load_tensor_file, read_tensor, save_tensor_file, write_tensor, Dtype, MAGIC, VERSION};
pub use pgd::{pgd_attack, pgd_iterate, Perturbation, PgdConfig};
pub use select::{filter_hard, hard_indices, subsample, subsample_indices};
pub use synth::{make_synthetic, quantize_f32, SynthSpec};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Images `[N, C, H, W]` in `[0, 1]` with class ids in `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.ndim() < 2 {
            return Err(Error::dim("images need a leading sample axis"));
        }
        let n = images.dims()[0];
        if n == 0 {
            return Err(Error::input("dataset is empty"));
        }
        if labels.len() != n {
            return Err(Error::dim(format!("{} labels for {} images", labels.len(), n)));
        }
        if classes < 2 {
            return Err(Error::input("need at least two classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::input(format!("label {bad} outside 0..{classes}")));
        }
        if let Some(&bad) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Per-sample dims, e.g. `[C, H, W]`.
    pub fn sample_dims(&self) -> &[usize] {
        &self.images.dims()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_dims().iter().product()
    }

    pub fn image(&self, i: usize) -> &[Float] {
        self.images.row(i)
    }

    /// Images and labels of the given samples, in the given order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.images.gather_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    /// The samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::input("subset would be empty"));
        }
        let (images, labels) = self.batch(indices)?;
        Ok(Dataset {
            images,
            labels,
            classes: self.classes,
            split: self.split,
        })
    }

    /// Same labels with replaced images, which must keep the same dims.
    pub fn with_images(&self, images: Tensor) -> Result<Dataset> {
        if images.dims() != self.images.dims() {
            return Err(Error::dim("replacement images change dims"));
        }
        Dataset::new(images, self.labels.clone(), self.classes, self.split)
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        self.split = split;
        self
    }

    /// Writes `<dir>/<split>_images.stns` (f32) and `<dir>/<split>_labels.stns` (u8).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if self.classes > 256 {
            return Err(Error::input("u8 labels hold at most 256 classes"));
        }
        let labels = Tensor::new(
            vec![self.len()],
            self.labels.iter().map(|&l| l as Float).collect(),
        )?;
        save_tensor_file(Self::images_path(dir, self.split), &self.images, Dtype::F32)?;
        save_tensor_file(Self::labels_path(dir, self.split), &labels, Dtype::U8)
    }

    /// Loads a split saved by [`Dataset::save`].
    pub fn load(dir: impl AsRef<Path>, split: Split, classes: usize) -> Result<Dataset> {
        let dir = dir.as_ref();
        let images = load_tensor_file(Self::images_path(dir, split))?;
        let lpath = Self::labels_path(dir, split);
        let labels = load_tensor_file(&lpath)?;
        if labels.ndim() != 1 {
            return Err(Error::format(lpath, "labels must be one-dimensional"));
        }
        let labels = labels.data().iter().map(|&v| v as usize).collect();
        Dataset::new(images, labels, classes, split)
    }

    pub fn images_path(dir: &Path, split: Split) -> std::path::PathBuf {
        dir.join(format!("{split}_images.stns"))
    }

    pub fn labels_path(dir: &Path, split: Split) -> std::path::PathBuf {
        dir.join(format!("{split}_labels.stns"))
    }

    /// Count of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        self.labels.iter().for_each(|&l| c[l] += 1);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let x = Tensor::new(vec![3, 1, 1, 2], vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.125]).unwrap();
        Dataset::new(x, vec![0, 1, 1], 2, Split::Train).unwrap()
    }

    #[test]
    fn validates_contents() {
        let x = Tensor::new(vec![1, 2], vec![0.0, 1.5]).unwrap();
        assert!(Dataset::new(x, vec![0], 2, Split::Train).is_err());
        let x = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        assert!(Dataset::new(x.clone(), vec![2], 2, Split::Train).is_err());
        assert!(Dataset::new(x, vec![0, 1], 2, Split::Train).is_err());
    }

    #[test]
    fn subset_keeps_order_given() {
        let d = tiny();
        let s = d.subset(&[2, 0]).unwrap();
        assert_eq!(s.labels(), &[1, 0]);
        assert_eq!(s.image(0), &[0.75, 0.125]);
        assert_eq!(d.class_counts(), vec![1, 2]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = tiny();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path(), Split::Train, 2).unwrap(), d);
        assert!(Dataset::load(dir.path(), Split::Test, 2).is_err());
    }
}
