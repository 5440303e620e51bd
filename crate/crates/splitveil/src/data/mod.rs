//! Datasets and their on-disk formats.

mod idx;
pub mod model_file;

pub use idx::{load_idx_images, load_idx_labels, write_idx_images, write_idx_labels};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Labeled image set with pixels scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S: Scalar> {
    pub images: Vec<Tensor<S>>,
    pub labels: Vec<u32>,
    pub n_classes: usize,
}

impl<S: Scalar> Dataset<S> {
    /// Validates pairing, label range, uniform image width, and pixel range.
    pub fn new(images: Vec<Tensor<S>>, labels: Vec<u32>, n_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::Contract("n_classes must be positive".into()));
        }
        if let Some(first) = images.first() {
            let width = first.len();
            if images.iter().any(|img| img.len() != width) {
                return Err(Error::Consistency(
                    "images must all have the same dimensions".into(),
                ));
            }
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        let one = S::one();
        for img in &images {
            if img.as_slice().iter().any(|&p| p < S::zero() || p > one) {
                return Err(Error::Consistency("pixels must lie in [0, 1]".into()));
            }
        }
        Ok(Self {
            images,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Pixel count per image (0 for an empty set).
    pub fn input_dim(&self) -> usize {
        self.images.first().map_or(0, Tensor::len)
    }
}

/// Loads an images/labels file pair. `n_classes` is inferred as
/// `max(label) + 1`.
pub fn load_dataset<S: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset<S>> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "images file holds {} samples but labels file holds {}",
            images.len(),
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(1, |&m| m as usize + 1);
    Dataset::new(images, labels, n_classes)
}

/// Canonical file names inside an MNIST directory.
pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Loads the training split from an MNIST directory laid out with the
/// canonical file names.
pub fn load_mnist_train<S: Scalar>(dir: impl AsRef<Path>) -> Result<Dataset<S>> {
    let dir = dir.as_ref();
    load_dataset(dir.join(MNIST_TRAIN_IMAGES), dir.join(MNIST_TRAIN_LABELS))
}

/// Directory MNIST is expected in: `$MNIST_DIR` if set, else `data/mnist`
/// under the workspace root.
pub fn default_mnist_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("MNIST_DIR") {
        return PathBuf::from(dir);
    }
    // crates/splitveil -> workspace root.
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    manifest
        .parent()
        .and_then(Path::parent)
        .map(|root| root.join("data/mnist"))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Keeps only samples labeled `a` or `b`, relabeling them 0 and 1 in input
/// order; the result is a 2-class dataset.
pub fn filter_binary<S: Scalar>(ds: &Dataset<S>, a: u32, b: u32) -> Result<Dataset<S>> {
    if a == b {
        return Err(Error::Contract(format!(
            "binary filter needs two distinct classes, got {a} twice"
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        if label == a {
            images.push(img.clone());
            labels.push(0);
        } else if label == b {
            images.push(img.clone());
            labels.push(1);
        }
    }
    if images.is_empty() {
        return Err(Error::Consistency(format!(
            "no samples carry class {a} or {b}"
        )));
    }
    Dataset::new(images, labels, 2)
}

/// Seeded shuffle-and-split. The first returned set holds
/// `floor(len · fraction)` samples; the two sets are disjoint and together
/// hold every input sample exactly once.
pub fn split<S: Scalar>(
    ds: Dataset<S>,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset<S>, Dataset<S>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = (n as f64 * fraction).floor() as usize;

    let n_classes = ds.n_classes;
    let mut images: Vec<Option<Tensor<S>>> = ds.images.into_iter().map(Some).collect();
    let labels = ds.labels;
    let mut take = |idxs: &[usize]| -> Result<Dataset<S>> {
        let mut imgs = Vec::with_capacity(idxs.len());
        let mut labs = Vec::with_capacity(idxs.len());
        for &i in idxs {
            imgs.push(images[i].take().expect("index visited once"));
            labs.push(labels[i]);
        }
        Dataset::new(imgs, labs, n_classes)
    };
    let train = take(&order[..cut])?;
    let validation = take(&order[cut..])?;
    Ok((train, validation))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset<f64> {
        let images = (0..10)
            .map(|i| Tensor::new(vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0]).unwrap())
            .collect();
        let labels = vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0];
        Dataset::new(images, labels, 3).unwrap()
    }

    #[test]
    fn construction_validates_pairing_and_ranges() {
        let img = Tensor::new(vec![0.5]).unwrap();
        assert!(Dataset::<f64>::new(vec![img.clone()], vec![0, 1], 2).is_err());
        assert!(Dataset::<f64>::new(vec![img.clone()], vec![5], 2).is_err());
        let out_of_range = Tensor::new(vec![1.5]).unwrap();
        assert!(Dataset::<f64>::new(vec![out_of_range], vec![0], 2).is_err());
        let ragged = vec![img, Tensor::new(vec![0.1, 0.2]).unwrap()];
        assert!(Dataset::<f64>::new(ragged, vec![0, 1], 2).is_err());
    }

    #[test]
    fn filter_binary_relabels_in_order() {
        let ds = tiny_dataset();
        let filtered = filter_binary(&ds, 2, 0).unwrap();
        // Class 2 → 0, class 0 → 1, order preserved: labels were
        // [0,1,2,0,1,2,0,1,2,0] → kept [0,2,0,2,0,2,0] → [1,0,1,0,1,0,1].
        assert_eq!(filtered.labels, vec![1, 0, 1, 0, 1, 0, 1]);
        assert_eq!(filtered.n_classes, 2);
        assert_eq!(filtered.len(), 7);
        // First kept image is the original sample 0.
        assert_eq!(filtered.images[0], ds.images[0]);
    }

    #[test]
    fn filter_binary_rejects_degenerate_requests() {
        let ds = tiny_dataset();
        assert!(filter_binary(&ds, 1, 1).is_err());
        assert!(filter_binary(&ds, 7, 8).is_err());
    }

    #[test]
    fn split_sizes_follow_floor_of_fraction() {
        let (train, val) = split(tiny_dataset(), 0.8, 1).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
    }

    #[test]
    fn split_partitions_the_multiset_exactly() {
        let ds = tiny_dataset();
        let mut before: Vec<(Vec<u64>, u32)> = ds
            .images
            .iter()
            .zip(&ds.labels)
            .map(|(img, &l)| {
                (
                    img.as_slice().iter().map(|v| v.to_bits()).collect(),
                    l,
                )
            })
            .collect();
        let (train, val) = split(ds, 0.7, 9).unwrap();
        let mut after: Vec<(Vec<u64>, u32)> = train
            .images
            .iter()
            .zip(&train.labels)
            .chain(val.images.iter().zip(&val.labels))
            .map(|(img, &l)| {
                (
                    img.as_slice().iter().map(|v| v.to_bits()).collect(),
                    l,
                )
            })
            .collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);
    }

    #[test]
    fn split_is_seed_deterministic_and_seed_sensitive() {
        let a = split(tiny_dataset(), 0.5, 4).unwrap();
        let b = split(tiny_dataset(), 0.5, 4).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = split(tiny_dataset(), 0.5, 5).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        assert!(split(tiny_dataset(), 0.0, 0).is_err());
        assert!(split(tiny_dataset(), 1.0, 0).is_err());
        assert!(split(tiny_dataset(), -0.3, 0).is_err());
    }
}
