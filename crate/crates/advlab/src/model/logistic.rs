//! Multinomial logistic regression on standardized pixels.

use crate::dataset::{LabeledImageSet, Standardization};
use crate::error::Result;
use crate::math::{cross_entropy, softmax, ProbVector};
use crate::rng::RandomStream;
use crate::Tensor64;

use super::{check_input_len, LayerSpan, TrainConfig, IMAGE_LEN, IMAGE_SIDE, N_CLASSES};

const W_LEN: usize = N_CLASSES * IMAGE_LEN;
const B_OFF: usize = W_LEN;
const P_LEN: usize = W_LEN + N_CLASSES;

/// Zero-initialized weights: the untrained model outputs the uniform
/// distribution, and the training problem is convex.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    standardization: Standardization,
    params: Vec<f64>, // [w: 10x784 row-major, b: 10]
}

impl LogisticModel {
    pub fn new(standardization: Standardization) -> Self {
        LogisticModel {
            standardization,
            params: vec![0.0; P_LEN],
        }
    }

    pub fn from_params(standardization: Standardization, params: Vec<f64>) -> Self {
        assert_eq!(params.len(), P_LEN);
        LogisticModel {
            standardization,
            params,
        }
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layer_spans(&self) -> Vec<LayerSpan> {
        vec![
            LayerSpan {
                name: "fc_w",
                offset: 0,
                len: W_LEN,
            },
            LayerSpan {
                name: "fc_b",
                offset: B_OFF,
                len: N_CLASSES,
            },
        ]
    }

    fn standardized(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&p| self.standardization.apply(p)).collect()
    }

    fn logits(&self, xs: &[f64]) -> Vec<f64> {
        let w = &self.params[..W_LEN];
        let b = &self.params[B_OFF..];
        (0..N_CLASSES)
            .map(|k| {
                let row = &w[k * IMAGE_LEN..(k + 1) * IMAGE_LEN];
                b[k] + row.iter().zip(xs).map(|(&wi, &xi)| wi * xi).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ProbVector<f64>> {
        check_input_len(x)?;
        Ok(softmax(&self.logits(&self.standardized(x))))
    }

    pub fn input_gradient(&self, x: &[f64], target: &ProbVector<f64>) -> Result<Tensor64> {
        check_input_len(x)?;
        let p = softmax(&self.logits(&self.standardized(x)));
        let w = &self.params[..W_LEN];
        let mut grad = vec![0.0; IMAGE_LEN];
        for k in 0..N_CLASSES {
            let delta = p.as_slice()[k] - target.as_slice()[k];
            let row = &w[k * IMAGE_LEN..(k + 1) * IMAGE_LEN];
            for i in 0..IMAGE_LEN {
                grad[i] += delta * row[i];
            }
        }
        let inv_sd = 1.0 / self.standardization.global_sd;
        for g in &mut grad {
            *g *= inv_sd;
        }
        Ok(Tensor64::new(vec![IMAGE_SIDE, IMAGE_SIDE], grad))
    }

    pub fn loss_and_weight_grad(&self, x: &[f64], target: &ProbVector<f64>) -> (f64, Vec<f64>) {
        let xs = self.standardized(x);
        let p = softmax(&self.logits(&xs));
        let loss = cross_entropy(&p, target);
        let mut grad = vec![0.0; P_LEN];
        for k in 0..N_CLASSES {
            let delta = p.as_slice()[k] - target.as_slice()[k];
            let row = &mut grad[k * IMAGE_LEN..(k + 1) * IMAGE_LEN];
            for i in 0..IMAGE_LEN {
                row[i] = delta * xs[i];
            }
            grad[B_OFF + k] = delta;
        }
        (loss, grad)
    }

    pub fn train(&mut self, train_set: &LabeledImageSet, cfg: &TrainConfig) -> Vec<f64> {
        let mut shuffle = RandomStream::new(cfg.seed, 0).derive(0x5f);
        let mut velocity = vec![0.0; P_LEN];
        let mut grad = vec![0.0; P_LEN];
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for _epoch in 0..cfg.epochs {
            let order = shuffle.permutation(train_set.len());
            let mut loss_sum = 0.0;
            let mut batches = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut batch_loss = 0.0;
                for &idx in batch {
                    let target = ProbVector::one_hot(train_set.label(idx) as usize, N_CLASSES);
                    let (loss, g) = self.loss_and_weight_grad(train_set.image(idx), &target);
                    batch_loss += loss;
                    for (acc, gi) in grad.iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                let inv = 1.0 / batch.len() as f64;
                loss_sum += batch_loss * inv;
                batches += 1.0;
                for i in 0..P_LEN {
                    velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * grad[i] * inv;
                    self.params[i] += velocity[i];
                }
            }
            epoch_losses.push(loss_sum / batches);
        }
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
        epoch_losses
    }
}
