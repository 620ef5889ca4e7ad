//! Convolutional network: conv 5x5 -> ReLU -> maxpool 2x2 -> conv 5x5 ->
//! ReLU -> maxpool 2x2 -> fully-connected -> ReLU -> dropout(0.5) ->
//! fully-connected -> softmax. Valid convolutions, hand-derived gradients.

use rayon::prelude::*;

use crate::dataset::{LabeledImageSet, Standardization};
use crate::error::Result;
use crate::math::{cross_entropy, softmax, ProbVector};
use crate::rng::RandomStream;
use crate::Tensor64;

use super::{check_input_len, dropout_stream, LayerSpan, TrainConfig, IMAGE_LEN, IMAGE_SIDE, N_CLASSES};

const K: usize = 5; // kernel side
const C1_OUT: usize = IMAGE_SIDE - K + 1; // 24
const P1_OUT: usize = C1_OUT / 2; // 12
const C2_OUT: usize = P1_OUT - K + 1; // 8
const P2_OUT: usize = C2_OUT / 2; // 4
const DROPOUT_P: f64 = 0.5;

/// Samples per deterministic accumulation chunk during training. Fixed so
/// the result does not depend on the worker-pool size.
const TRAIN_CHUNK: usize = 16;

/// Filter/hidden-unit counts.
///
/// `Desk` (16/32 filters, 128 hidden) trains on a CPU in minutes; `Full`
/// (64/128 filters, 256 hidden) is the full-size configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvNetSize {
    Desk,
    Full,
}

impl ConvNetSize {
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            ConvNetSize::Desk => (16, 32, 128),
            ConvNetSize::Full => (64, 128, 256),
        }
    }

    pub fn from_dims(f1: usize, f2: usize, hidden: usize) -> Option<Self> {
        match (f1, f2, hidden) {
            (16, 32, 128) => Some(ConvNetSize::Desk),
            (64, 128, 256) => Some(ConvNetSize::Full),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvNetModel {
    standardization: Standardization,
    size: ConvNetSize,
    f1: usize,
    f2: usize,
    hidden: usize,
    params: Vec<f64>,
}

struct Offsets {
    conv1_w: usize,
    conv1_b: usize,
    conv2_w: usize,
    conv2_b: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
    total: usize,
}

fn offsets(f1: usize, f2: usize, hidden: usize) -> Offsets {
    let flat = f2 * P2_OUT * P2_OUT;
    let conv1_w = 0;
    let conv1_b = conv1_w + f1 * K * K;
    let conv2_w = conv1_b + f1;
    let conv2_b = conv2_w + f2 * f1 * K * K;
    let fc1_w = conv2_b + f2;
    let fc1_b = fc1_w + hidden * flat;
    let fc2_w = fc1_b + hidden;
    let fc2_b = fc2_w + N_CLASSES * hidden;
    Offsets {
        conv1_w,
        conv1_b,
        conv2_w,
        conv2_b,
        fc1_w,
        fc1_b,
        fc2_w,
        fc2_b,
        total: fc2_b + N_CLASSES,
    }
}

/// Forward activations cached for the backward pass.
struct Cache {
    xs: Vec<f64>,                 // standardized input
    pool1: Vec<f64>,              // f1 x 12 x 12
    pool1_arg: Vec<usize>,        // argmax index into conv1 grid
    pool2: Vec<f64>,              // f2 x 4 x 4 (the flattened fc input)
    pool2_arg: Vec<usize>,
    hidden_pre: Vec<f64>,         // hidden
    hidden_act: Vec<f64>,         // after ReLU and (optionally) dropout
    probs: ProbVector<f64>,
}

impl ConvNetModel {
    pub fn new(standardization: Standardization, size: ConvNetSize, init_seed: u64) -> Self {
        let (f1, f2, hidden) = size.dims();
        let off = offsets(f1, f2, hidden);
        let mut params = vec![0.0; off.total];
        // He-normal initialization for the weight blocks, zero biases
        let mut stream = RandomStream::new(init_seed, 0).derive(0x1417);
        let mut init = |range: std::ops::Range<usize>, fan_in: usize, s: &mut RandomStream| {
            let sd = (2.0 / fan_in as f64).sqrt();
            let draws = s.draw_gaussian(0.0, sd * sd, range.len());
            params[range].copy_from_slice(&draws);
        };
        init(off.conv1_w..off.conv1_b, K * K, &mut stream);
        init(off.conv2_w..off.conv2_b, f1 * K * K, &mut stream);
        init(off.fc1_w..off.fc1_b, f2 * P2_OUT * P2_OUT, &mut stream);
        init(off.fc2_w..off.fc2_b, hidden, &mut stream);
        ConvNetModel {
            standardization,
            size,
            f1,
            f2,
            hidden,
            params,
        }
    }

    pub fn from_params(
        standardization: Standardization,
        size: ConvNetSize,
        params: Vec<f64>,
    ) -> Self {
        let (f1, f2, hidden) = size.dims();
        assert_eq!(params.len(), offsets(f1, f2, hidden).total);
        ConvNetModel {
            standardization,
            size,
            f1,
            f2,
            hidden,
            params,
        }
    }

    pub fn size(&self) -> ConvNetSize {
        self.size
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
        let off = offsets(self.f1, self.f2, self.hidden);
        vec![
            LayerSpan { name: "conv1_w", offset: off.conv1_w, len: off.conv1_b - off.conv1_w },
            LayerSpan { name: "conv1_b", offset: off.conv1_b, len: off.conv2_w - off.conv1_b },
            LayerSpan { name: "conv2_w", offset: off.conv2_w, len: off.conv2_b - off.conv2_w },
            LayerSpan { name: "conv2_b", offset: off.conv2_b, len: off.fc1_w - off.conv2_b },
            LayerSpan { name: "fc1_w", offset: off.fc1_w, len: off.fc1_b - off.fc1_w },
            LayerSpan { name: "fc1_b", offset: off.fc1_b, len: off.fc2_w - off.fc1_b },
            LayerSpan { name: "fc2_w", offset: off.fc2_w, len: off.fc2_b - off.fc2_w },
            LayerSpan { name: "fc2_b", offset: off.fc2_b, len: N_CLASSES },
        ]
    }

    fn forward_cached(&self, x: &[f64], dropout_mask: Option<&[f64]>) -> Cache {
        let (f1, f2, hidden) = (self.f1, self.f2, self.hidden);
        let off = offsets(f1, f2, hidden);
        let p = &self.params;
        let xs: Vec<f64> = x.iter().map(|&v| self.standardization.apply(v)).collect();

        // conv1 + bias
        let mut conv1_pre = vec![0.0; f1 * C1_OUT * C1_OUT];
        for f in 0..f1 {
            let w = &p[off.conv1_w + f * K * K..off.conv1_w + (f + 1) * K * K];
            let b = p[off.conv1_b + f];
            let out = &mut conv1_pre[f * C1_OUT * C1_OUT..(f + 1) * C1_OUT * C1_OUT];
            for r in 0..C1_OUT {
                for c in 0..C1_OUT {
                    let mut acc = b;
                    for i in 0..K {
                        let row = &xs[(r + i) * IMAGE_SIDE + c..(r + i) * IMAGE_SIDE + c + K];
                        let wr = &w[i * K..(i + 1) * K];
                        for j in 0..K {
                            acc += wr[j] * row[j];
                        }
                    }
                    out[r * C1_OUT + c] = acc;
                }
            }
        }

        // ReLU + maxpool 2x2 (argmax kept for backprop; first max wins ties)
        let mut pool1 = vec![0.0; f1 * P1_OUT * P1_OUT];
        let mut pool1_arg = vec![0usize; f1 * P1_OUT * P1_OUT];
        max_pool(&conv1_pre, f1, C1_OUT, &mut pool1, &mut pool1_arg);

        // conv2 + bias over f1 input channels
        let mut conv2_pre = vec![0.0; f2 * C2_OUT * C2_OUT];
        for f in 0..f2 {
            let b = p[off.conv2_b + f];
            let out = &mut conv2_pre[f * C2_OUT * C2_OUT..(f + 1) * C2_OUT * C2_OUT];
            out.iter_mut().for_each(|v| *v = b);
            for g in 0..f1 {
                let w = &p[off.conv2_w + (f * f1 + g) * K * K..off.conv2_w + (f * f1 + g + 1) * K * K];
                let chan = &pool1[g * P1_OUT * P1_OUT..(g + 1) * P1_OUT * P1_OUT];
                for r in 0..C2_OUT {
                    for c in 0..C2_OUT {
                        let mut acc = 0.0;
                        for i in 0..K {
                            let row = &chan[(r + i) * P1_OUT + c..(r + i) * P1_OUT + c + K];
                            let wr = &w[i * K..(i + 1) * K];
                            for j in 0..K {
                                acc += wr[j] * row[j];
                            }
                        }
                        out[r * C2_OUT + c] += acc;
                    }
                }
            }
        }

        let mut pool2 = vec![0.0; f2 * P2_OUT * P2_OUT];
        let mut pool2_arg = vec![0usize; f2 * P2_OUT * P2_OUT];
        max_pool(&conv2_pre, f2, C2_OUT, &mut pool2, &mut pool2_arg);

        // fc1 + ReLU (+ inverted dropout during training)
        let flat = f2 * P2_OUT * P2_OUT;
        let mut hidden_pre = vec![0.0; hidden];
        for h in 0..hidden {
            let w = &p[off.fc1_w + h * flat..off.fc1_w + (h + 1) * flat];
            hidden_pre[h] = p[off.fc1_b + h]
                + w.iter().zip(&pool2).map(|(&wi, &zi)| wi * zi).sum::<f64>();
        }
        let mut hidden_act: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();
        if let Some(mask) = dropout_mask {
            for (a, &m) in hidden_act.iter_mut().zip(mask) {
                *a *= m / (1.0 - DROPOUT_P);
            }
        }

        let logits: Vec<f64> = (0..N_CLASSES)
            .map(|k| {
                let w = &p[off.fc2_w + k * hidden..off.fc2_w + (k + 1) * hidden];
                p[off.fc2_b + k]
                    + w.iter().zip(&hidden_act).map(|(&wi, &hi)| wi * hi).sum::<f64>()
            })
            .collect();

        Cache {
            xs,
            pool1,
            pool1_arg,
            pool2,
            pool2_arg,
            hidden_pre,
            hidden_act,
            probs: softmax(&logits),
        }
    }

    /// Backward pass from the softmax/cross-entropy delta. Accumulates into
    /// `weight_grad` when given and returns the raw-pixel input gradient when
    /// `want_input_grad` is set.
    fn backward(
        &self,
        cache: &Cache,
        target: &ProbVector<f64>,
        dropout_mask: Option<&[f64]>,
        mut weight_grad: Option<&mut [f64]>,
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (f1, f2, hidden) = (self.f1, self.f2, self.hidden);
        let off = offsets(f1, f2, hidden);
        let p = &self.params;
        let flat = f2 * P2_OUT * P2_OUT;

        let dlogits: Vec<f64> = cache
            .probs
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(&pi, &ti)| pi - ti)
            .collect();

        // fc2
        let mut dhidden = vec![0.0; hidden];
        for k in 0..N_CLASSES {
            let w = &p[off.fc2_w + k * hidden..off.fc2_w + (k + 1) * hidden];
            for h in 0..hidden {
                dhidden[h] += dlogits[k] * w[h];
            }
        }
        if let Some(grad) = weight_grad.as_deref_mut() {
            for k in 0..N_CLASSES {
                let gw = &mut grad[off.fc2_w + k * hidden..off.fc2_w + (k + 1) * hidden];
                for h in 0..hidden {
                    gw[h] += dlogits[k] * cache.hidden_act[h];
                }
                grad[off.fc2_b + k] += dlogits[k];
            }
        }

        // dropout and ReLU backward on fc1
        if let Some(mask) = dropout_mask {
            for (d, &m) in dhidden.iter_mut().zip(mask) {
                *d *= m / (1.0 - DROPOUT_P);
            }
        }
        for h in 0..hidden {
            if cache.hidden_pre[h] <= 0.0 {
                dhidden[h] = 0.0;
            }
        }

        // fc1
        let mut dpool2 = vec![0.0; flat];
        for h in 0..hidden {
            if dhidden[h] == 0.0 {
                continue;
            }
            let w = &p[off.fc1_w + h * flat..off.fc1_w + (h + 1) * flat];
            for z in 0..flat {
                dpool2[z] += dhidden[h] * w[z];
            }
        }
        if let Some(grad) = weight_grad.as_deref_mut() {
            for h in 0..hidden {
                if dhidden[h] == 0.0 {
                    continue;
                }
                let gw = &mut grad[off.fc1_w + h * flat..off.fc1_w + (h + 1) * flat];
                for z in 0..flat {
                    gw[z] += dhidden[h] * cache.pool2[z];
                }
            }
            for h in 0..hidden {
                grad[off.fc1_b + h] += dhidden[h];
            }
        }

        // unpool2 + ReLU backward into the conv2 grid
        let mut dconv2 = vec![0.0; f2 * C2_OUT * C2_OUT];
        for (z, &src) in cache.pool2_arg.iter().enumerate() {
            if cache.pool2[z] > 0.0 {
                dconv2[src] += dpool2[z];
            }
        }

        // conv2 backward
        let mut dpool1 = vec![0.0; f1 * P1_OUT * P1_OUT];
        for f in 0..f2 {
            let dout = &dconv2[f * C2_OUT * C2_OUT..(f + 1) * C2_OUT * C2_OUT];
            if let Some(grad) = weight_grad.as_deref_mut() {
                grad[off.conv2_b + f] += dout.iter().sum::<f64>();
            }
            for g in 0..f1 {
                let w = &p[off.conv2_w + (f * f1 + g) * K * K..off.conv2_w + (f * f1 + g + 1) * K * K];
                let chan = &cache.pool1[g * P1_OUT * P1_OUT..(g + 1) * P1_OUT * P1_OUT];
                let dchan = &mut dpool1[g * P1_OUT * P1_OUT..(g + 1) * P1_OUT * P1_OUT];
                for r in 0..C2_OUT {
                    for c in 0..C2_OUT {
                        let d = dout[r * C2_OUT + c];
                        if d == 0.0 {
                            continue;
                        }
                        for i in 0..K {
                            for j in 0..K {
                                dchan[(r + i) * P1_OUT + c + j] += d * w[i * K + j];
                            }
                        }
                    }
                }
                if let Some(grad) = weight_grad.as_deref_mut() {
                    let gw = &mut grad
                        [off.conv2_w + (f * f1 + g) * K * K..off.conv2_w + (f * f1 + g + 1) * K * K];
                    for r in 0..C2_OUT {
                        for c in 0..C2_OUT {
                            let d = dout[r * C2_OUT + c];
                            if d == 0.0 {
                                continue;
                            }
                            for i in 0..K {
                                for j in 0..K {
                                    gw[i * K + j] += d * chan[(r + i) * P1_OUT + c + j];
                                }
                            }
                        }
                    }
                }
            }
        }

        // unpool1 + ReLU backward into the conv1 grid
        let mut dconv1 = vec![0.0; f1 * C1_OUT * C1_OUT];
        for (z, &src) in cache.pool1_arg.iter().enumerate() {
            if cache.pool1[z] > 0.0 {
                dconv1[src] += dpool1[z];
            }
        }

        // conv1 backward
        let mut dinput = if want_input_grad {
            Some(vec![0.0; IMAGE_LEN])
        } else {
            None
        };
        for f in 0..f1 {
            let dout = &dconv1[f * C1_OUT * C1_OUT..(f + 1) * C1_OUT * C1_OUT];
            if let Some(grad) = weight_grad.as_deref_mut() {
                grad[off.conv1_b + f] += dout.iter().sum::<f64>();
            }
            let w = &p[off.conv1_w + f * K * K..off.conv1_w + (f + 1) * K * K];
            for r in 0..C1_OUT {
                for c in 0..C1_OUT {
                    let d = dout[r * C1_OUT + c];
                    if d == 0.0 {
                        continue;
                    }
                    if let Some(di) = dinput.as_deref_mut() {
                        for i in 0..K {
                            for j in 0..K {
                                di[(r + i) * IMAGE_SIDE + c + j] += d * w[i * K + j];
                            }
                        }
                    }
                    if let Some(grad) = weight_grad.as_deref_mut() {
                        let gw = &mut grad[off.conv1_w + f * K * K..off.conv1_w + (f + 1) * K * K];
                        for i in 0..K {
                            for j in 0..K {
                                gw[i * K + j] += d * cache.xs[(r + i) * IMAGE_SIDE + c + j];
                            }
                        }
                    }
                }
            }
        }

        dinput.map(|mut di| {
            let inv_sd = 1.0 / self.standardization.global_sd;
            for v in &mut di {
                *v *= inv_sd;
            }
            di
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<ProbVector<f64>> {
        check_input_len(x)?;
        Ok(self.forward_cached(x, None).probs)
    }

    pub fn input_gradient(&self, x: &[f64], target: &ProbVector<f64>) -> Result<Tensor64> {
        check_input_len(x)?;
        let cache = self.forward_cached(x, None);
        let di = self
            .backward(&cache, target, None, None, true)
            .expect("input gradient requested");
        Ok(Tensor64::new(vec![IMAGE_SIDE, IMAGE_SIDE], di))
    }

    pub fn loss_and_weight_grad(&self, x: &[f64], target: &ProbVector<f64>) -> (f64, Vec<f64>) {
        let cache = self.forward_cached(x, None);
        let loss = cross_entropy(&cache.probs, target);
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&cache, target, None, Some(&mut grad), false);
        (loss, grad)
    }

    pub fn train(&mut self, train_set: &LabeledImageSet, cfg: &TrainConfig) -> Vec<f64> {
        let n_params = self.params.len();
        let mut shuffle = RandomStream::new(cfg.seed, 0).derive(0x5f);
        let mut velocity = vec![0.0; n_params];
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let order = shuffle.permutation(train_set.len());
            let mut loss_sum = 0.0;
            let mut batches = 0.0;
            for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
                // fixed-size chunks keep the accumulation order independent
                // of the worker-pool size
                let chunk_results: Vec<(f64, Vec<f64>)> = batch
                    .par_chunks(TRAIN_CHUNK)
                    .enumerate()
                    .map(|(chunk_no, chunk)| {
                        let mut grad = vec![0.0; n_params];
                        let mut loss = 0.0;
                        for (k, &idx) in chunk.iter().enumerate() {
                            let position = batch_no * cfg.batch_size + chunk_no * TRAIN_CHUNK + k;
                            let mut mask_stream = dropout_stream(cfg.seed, epoch, position);
                            let mask: Vec<f64> = (0..self.hidden)
                                .map(|_| {
                                    if mask_stream.gen_f64() < DROPOUT_P { 0.0 } else { 1.0 }
                                })
                                .collect();
                            let target =
                                ProbVector::one_hot(train_set.label(idx) as usize, N_CLASSES);
                            let cache = self.forward_cached(train_set.image(idx), Some(&mask));
                            loss += cross_entropy(&cache.probs, &target);
                            self.backward(&cache, &target, Some(&mask), Some(&mut grad), false);
                        }
                        (loss, grad)
                    })
                    .collect();
                let mut grad = vec![0.0; n_params];
                let mut batch_loss = 0.0;
                for (loss, g) in &chunk_results {
                    batch_loss += loss;
                    for (acc, gi) in grad.iter_mut().zip(g) {
                        *acc += gi;
                    }
                }
                let inv = 1.0 / batch.len() as f64;
                loss_sum += batch_loss * inv;
                batches += 1.0;
                for i in 0..n_params {
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

fn max_pool(
    input: &[f64],
    channels: usize,
    side: usize,
    out: &mut [f64],
    arg: &mut [usize],
) {
    let half = side / 2;
    for ch in 0..channels {
        let grid = &input[ch * side * side..(ch + 1) * side * side];
        for r in 0..half {
            for c in 0..half {
                let mut best_idx = (2 * r) * side + 2 * c;
                let mut best = grid[best_idx];
                for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * r + dr) * side + 2 * c + dc;
                    if grid[idx] > best {
                        best = grid[idx];
                        best_idx = idx;
                    }
                }
                let o = ch * half * half + r * half + c;
                out[o] = best.max(0.0); // ReLU fused into the pool
                arg[o] = ch * side * side + best_idx;
            }
        }
    }
}
