//! MNIST ingestion, global standardization, and sampling of attack cases.

use std::path::Path;

use crate::error::{Error, Result};
use crate::idx;
use crate::rng::RandomStream;
use crate::Tensor64;

/// Images in the raw `[0, 255]` pixel domain with their class labels.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    images: Tensor64,
    labels: Vec<u8>,
}

impl LabeledImageSet {
    pub fn new(images: Tensor64, labels: Vec<u8>) -> Self {
        assert_eq!(images.shape()[0], labels.len());
        assert!(images.data().iter().all(|&p| (0.0..=255.0).contains(&p)));
        LabeledImageSet { images, labels }
    }

    /// Loads the conventional pair of uncompressed IDX files.
    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = idx::load_idx_images(images_path)?;
        let labels = idx::load_idx_labels(labels_path)?;
        if images.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![labels.len()],
                found: vec![images.shape()[0]],
            });
        }
        Ok(LabeledImageSet { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.images.shape()[1] * self.images.shape()[2]
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let m = self.image_len();
        &self.images.data()[i * m..(i + 1) * m]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor64 {
        &self.images
    }
}

/// Scalar mean/sd over all pixels of the training images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub global_mean: f64,
    pub global_sd: f64,
}

impl Standardization {
    pub fn apply(&self, pixel: f64) -> f64 {
        (pixel - self.global_mean) / self.global_sd
    }
}

/// Fits the global pixel mean and standard deviation on the training split.
pub fn fit_standardization(train: &LabeledImageSet) -> Result<Standardization> {
    assert!(!train.is_empty());
    let (mean, var) = crate::stats::mean_variance(train.images().data());
    if var == 0.0 {
        return Err(Error::DegenerateData);
    }
    Ok(Standardization {
        global_mean: mean,
        global_sd: var.sqrt(),
    })
}

/// One original image together with its correct and adversarial labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackCase {
    pub original_index: usize,
    pub correct_label: u8,
    pub adversarial_label: u8,
}

/// Anything that maps a raw-pixel image to a predicted class index.
pub trait Classify {
    fn predict(&self, image: &[f64]) -> usize;
}

/// Samples `n` correctly classified originals without replacement and pairs
/// each with an adversarial label drawn uniformly from the 9 others.
pub fn sample_attack_cases(
    model: &dyn Classify,
    data: &LabeledImageSet,
    n: usize,
    stream: &mut RandomStream,
) -> Result<Vec<AttackCase>> {
    let correct: Vec<usize> = (0..data.len())
        .filter(|&i| model.predict(data.image(i)) == data.label(i) as usize)
        .collect();
    if correct.len() < n {
        return Err(Error::InsufficientCorrect {
            available: correct.len(),
            requested: n,
        });
    }
    let picks = stream.sample_indices(correct.len(), n);
    let cases = picks
        .into_iter()
        .map(|k| {
            let original_index = correct[k];
            let c = data.label(original_index);
            // uniform over the 9 labels != c
            let r = stream.gen_range_usize(9) as u8;
            let adversarial_label = if r >= c { r + 1 } else { r };
            AttackCase {
                original_index,
                correct_label: c,
                adversarial_label,
            }
        })
        .collect();
    Ok(cases)
}
