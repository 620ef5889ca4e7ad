//! Differentiable classifiers with fixed-weight inference, SGD+momentum
//! training, input gradients, and weight persistence.
//!
//! Both architectures fold pixel standardization into the forward pass, so
//! callers always work in the raw `[0, 255]` pixel domain. Parameters live in
//! a single flat vector per model; layer offsets are exposed for the
//! finite-difference gradient checks.

mod convnet;
mod io;
mod logistic;

pub use convnet::{ConvNetModel, ConvNetSize};
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use logistic::LogisticModel;

use crate::dataset::{Classify, LabeledImageSet, Standardization};
use crate::error::Result;
use crate::math::ProbVector;
use crate::rng::RandomStream;
use crate::Tensor64;

pub const N_CLASSES: usize = 10;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Mini-batch SGD with classical momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn logistic_default(seed: u64) -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed,
        }
    }

    pub fn convnet_default(seed: u64) -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed,
        }
    }
}

/// Error rate plus per-(true, predicted) confusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub error_rate: f64,
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
}

/// A named parameter block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpan {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub enum Model {
    Logistic(LogisticModel),
    ConvNet(ConvNetModel),
}

impl Model {
    pub fn logistic(standardization: Standardization) -> Self {
        Model::Logistic(LogisticModel::new(standardization))
    }

    pub fn convnet(standardization: Standardization, size: ConvNetSize, init_seed: u64) -> Self {
        Model::ConvNet(ConvNetModel::new(standardization, size, init_seed))
    }

    pub fn architecture(&self) -> &'static str {
        match self {
            Model::Logistic(_) => "logistic",
            Model::ConvNet(_) => "convnet",
        }
    }

    pub fn standardization(&self) -> Standardization {
        match self {
            Model::Logistic(m) => m.standardization(),
            Model::ConvNet(m) => m.standardization(),
        }
    }

    /// Inference-mode class probabilities for a raw-pixel image.
    pub fn forward(&self, x: &[f64]) -> Result<ProbVector<f64>> {
        match self {
            Model::Logistic(m) => m.forward(x),
            Model::ConvNet(m) => m.forward(x),
        }
    }

    /// Gradient of `cross_entropy(forward(x), target)` with respect to the
    /// raw pixels (includes the `1/sd` standardization factor).
    pub fn input_gradient(&self, x: &[f64], target: &ProbVector<f64>) -> Result<Tensor64> {
        match self {
            Model::Logistic(m) => m.input_gradient(x, target),
            Model::ConvNet(m) => m.input_gradient(x, target),
        }
    }

    /// Trains in place; returns the mean mini-batch cross-entropy per epoch.
    pub fn train(&mut self, train_set: &LabeledImageSet, cfg: &TrainConfig) -> Vec<f64> {
        match self {
            Model::Logistic(m) => m.train(train_set, cfg),
            Model::ConvNet(m) => m.train(train_set, cfg),
        }
    }

    pub fn evaluate(&self, test_set: &LabeledImageSet) -> EvalReport {
        let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
        let mut wrong = 0usize;
        for i in 0..test_set.len() {
            let truth = test_set.label(i) as usize;
            let pred = self.predict(test_set.image(i));
            confusion[truth][pred] += 1;
            if pred != truth {
                wrong += 1;
            }
        }
        EvalReport {
            error_rate: wrong as f64 / test_set.len().max(1) as f64,
            confusion,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Logistic(m) => m.params(),
            Model::ConvNet(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Logistic(m) => m.params_mut(),
            Model::ConvNet(m) => m.params_mut(),
        }
    }

    pub fn layer_spans(&self) -> Vec<LayerSpan> {
        match self {
            Model::Logistic(m) => m.layer_spans(),
            Model::ConvNet(m) => m.layer_spans(),
        }
    }

    /// Loss and flat weight gradient for one labeled example, inference-mode
    /// forward (no dropout). Used by the gradient test suite.
    pub fn loss_and_weight_grad(&self, x: &[f64], target: &ProbVector<f64>) -> (f64, Vec<f64>) {
        match self {
            Model::Logistic(m) => m.loss_and_weight_grad(x, target),
            Model::ConvNet(m) => m.loss_and_weight_grad(x, target),
        }
    }

    /// Rounds every parameter through `f32`, making the on-disk narrowing a
    /// lossless round trip. Called at the end of training and by the loader.
    pub fn quantize_params(&mut self) {
        for p in self.params_mut() {
            *p = *p as f32 as f64;
        }
    }
}

impl Classify for Model {
    fn predict(&self, image: &[f64]) -> usize {
        self.forward(image).expect("image shape").argmax()
    }
}

pub(crate) fn check_input_len(x: &[f64]) -> Result<()> {
    if x.len() != IMAGE_LEN {
        return Err(crate::Error::ShapeMismatch {
            expected: vec![IMAGE_LEN],
            found: vec![x.len()],
        });
    }
    Ok(())
}

/// Per-sample dropout stream for training step `(epoch, position)`.
pub(crate) fn dropout_stream(seed: u64, epoch: usize, position: usize) -> RandomStream {
    RandomStream::new(seed, 0)
        .derive(0xd0)
        .derive(epoch as u64)
        .derive(position as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Standardization;
    use crate::Tensor64;
    use approx::assert_abs_diff_eq;

    fn std_id() -> Standardization {
        Standardization {
            global_mean: 0.0,
            global_sd: 1.0,
        }
    }

    #[test]
    fn zero_logistic_outputs_uniform() {
        let m = Model::logistic(std_id());
        let p = m.forward(&vec![0.0; IMAGE_LEN]).unwrap();
        for &pi in p.as_slice() {
            assert_abs_diff_eq!(pi, 0.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let m = Model::logistic(std_id());
        assert!(m.forward(&[0.0; 10]).is_err());
    }

    #[test]
    fn forward_probabilities_normalize() {
        let mut stream = crate::RandomStream::new(8, 0);
        let m = Model::convnet(std_id(), ConvNetSize::Desk, 3);
        let x: Vec<f64> = stream.draw_empirical(&(0..=255).map(f64::from).collect::<Vec<_>>(), IMAGE_LEN).unwrap();
        let p = m.forward(&x).unwrap();
        let sum: f64 = p.as_slice().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn stationary_target_gives_zero_input_gradient() {
        let m = Model::logistic(std_id());
        let x = vec![10.0; IMAGE_LEN];
        let p = m.forward(&x).unwrap();
        let g = m.input_gradient(&x, &p).unwrap();
        assert!(g.linf_norm() <= 1e-12);
    }

    #[test]
    fn uniform_model_on_balanced_data_is_chance_level() {
        // zero logistic predicts class 0 everywhere (lowest-index tie-break)
        let m = Model::logistic(std_id());
        let n = 40;
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let images = Tensor64::zeros(vec![n, IMAGE_SIDE, IMAGE_SIDE]);
        let set = crate::dataset::LabeledImageSet::new(images, labels);
        let report = m.evaluate(&set);
        assert_abs_diff_eq!(report.error_rate, 0.9, epsilon = 1e-12);
        assert_eq!(report.confusion[0][0], 4);
    }

    #[test]
    fn evaluate_confusion_consistent_with_error_rate() {
        let m = Model::logistic(std_id());
        let n = 20;
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let images = Tensor64::zeros(vec![n, IMAGE_SIDE, IMAGE_SIDE]);
        let set = crate::dataset::LabeledImageSet::new(images, labels);
        let report = m.evaluate(&set);
        let wrong: usize = (0..10)
            .flat_map(|t| (0..10).map(move |p| (t, p)))
            .filter(|&(t, p)| t != p)
            .map(|(t, p)| report.confusion[t][p])
            .sum();
        assert_abs_diff_eq!(report.error_rate, wrong as f64 / n as f64, epsilon = 1e-15);
    }

    #[test]
    fn separable_toy_problem_reaches_zero_training_error() {
        // two classes encoded directly in pixel intensity
        let n = 60;
        let mut data = vec![0.0; n * IMAGE_LEN];
        let mut labels = vec![0u8; n];
        for i in 0..n {
            let v = if i % 2 == 0 { 200.0 } else { 20.0 };
            labels[i] = (i % 2) as u8;
            for px in 0..IMAGE_LEN {
                data[i * IMAGE_LEN + px] = v;
            }
        }
        let images = Tensor64::new(vec![n, IMAGE_SIDE, IMAGE_SIDE], data);
        let set = crate::dataset::LabeledImageSet::new(images, labels);
        let std = crate::dataset::fit_standardization(&set).unwrap();
        let mut m = Model::logistic(std);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 4,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 1,
        };
        m.train(&set, &cfg);
        assert_eq!(m.evaluate(&set).error_rate, 0.0);
    }

    #[test]
    fn inference_is_deterministic() {
        let m = Model::convnet(std_id(), ConvNetSize::Desk, 7);
        let x: Vec<f64> = (0..IMAGE_LEN).map(|i| (i % 256) as f64).collect();
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    }
}
