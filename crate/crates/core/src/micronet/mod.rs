//! Small CNN classifier with a jointly trained hardness head.
//!
//! The classifier is a stack of 3×3 conv + ReLU blocks (optionally followed
//! by 2×2 max pooling), global average pooling, a fully-connected layer and a
//! softmax. The hardness head is a single sigmoid unit over the same pooled
//! features. One block output is designated the *tap*: the activation tensor
//! that attribution maps are computed over, for both the class posteriors and
//! the confidence score.

mod layers;
mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{argmax, Tensor, TensorError};

pub use train::{train, train_with_progress, EpochStats, TrainConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("input shape {actual:?} does not match the expected {expected:?}")]
    InputShape {
        expected: [usize; 3],
        actual: Vec<usize>,
    },
    #[error("invalid architecture: {0}")]
    Architecture(&'static str),
    #[error("unknown score selector `{0}`")]
    UnknownSelector(String),
    #[error("unknown tap layer `{0}`")]
    UnknownTap(String),
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("model has {model} classes but the dataset has {dataset}")]
    ClassCountMismatch { model: usize, dataset: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset labels/ids do not match the image count")]
    DatasetLayout,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("parameter array `{name}` has {actual} values, expected {expected}")]
    ParamLength {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One conv 3×3 (same padding) + ReLU block, optionally max-pooled by 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub pool: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// `[channels, height, width]`.
    pub input: [usize; 3],
    pub blocks: Vec<ConvBlock>,
    pub classes: usize,
}

impl Architecture {
    /// 3×32×32 input, conv(8)-pool, conv(16)-pool, conv(32): an 8×8×32 tap.
    pub fn standard(classes: usize) -> Self {
        Self::with_widths(classes, [8, 16, 32])
    }

    /// The "advanced user" network: same layout at half the channel widths.
    pub fn weak(classes: usize) -> Self {
        Self::with_widths(classes, [4, 8, 16])
    }

    fn with_widths(classes: usize, widths: [usize; 3]) -> Self {
        Self {
            input: [3, 32, 32],
            blocks: vec![
                ConvBlock { out_channels: widths[0], pool: true },
                ConvBlock { out_channels: widths[1], pool: true },
                ConvBlock { out_channels: widths[2], pool: false },
            ],
            classes,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.classes < 2 {
            return Err(NetError::Architecture("at least two classes required"));
        }
        if self.blocks.is_empty() {
            return Err(NetError::Architecture("at least one conv block required"));
        }
        if self.input.iter().any(|&d| d == 0) {
            return Err(NetError::Architecture("empty input shape"));
        }
        let mut shape = self.input;
        for block in &self.blocks {
            if block.out_channels == 0 {
                return Err(NetError::Architecture("conv block with zero channels"));
            }
            if block.pool && (shape[1] < 2 || shape[2] < 2) {
                return Err(NetError::Architecture("pooling below 2×2 spatial size"));
            }
            shape = Self::block_out(shape, block);
        }
        Ok(())
    }

    fn block_out(input: [usize; 3], block: &ConvBlock) -> [usize; 3] {
        if block.pool {
            [block.out_channels, input[1] / 2, input[2] / 2]
        } else {
            [block.out_channels, input[1], input[2]]
        }
    }

    /// Input shape of each block.
    pub fn block_inputs(&self) -> Vec<[usize; 3]> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            out.push(shape);
            shape = Self::block_out(shape, block);
        }
        out
    }

    /// Output shape of each block; these are the tappable layers.
    pub fn block_outputs(&self) -> Vec<[usize; 3]> {
        let mut shape = self.input;
        self.blocks
            .iter()
            .map(|b| {
                shape = Self::block_out(shape, b);
                shape
            })
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.out_channels)
    }

    /// Tap names are `conv1`, `conv2`, …; the default tap is the last block.
    pub fn tap_index(&self, name: &str) -> Result<usize, NetError> {
        name.strip_prefix("conv")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1 && n <= self.blocks.len())
            .map(|n| n - 1)
            .ok_or_else(|| NetError::UnknownTap(name.into()))
    }

    pub fn tap_name(index: usize) -> String {
        format!("conv{}", index + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    /// `[out][in][3][3]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// All trainable arrays. Also used as the gradient and momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub convs: Vec<ConvParams>,
    /// `[classes][features]`.
    pub fc_weight: Vec<f64>,
    pub fc_bias: Vec<f64>,
    pub hardness_weight: Vec<f64>,
    pub hardness_bias: Vec<f64>,
}

impl Params {
    pub fn zeros(arch: &Architecture) -> Self {
        let inputs = arch.block_inputs();
        let convs = arch
            .blocks
            .iter()
            .zip(&inputs)
            .map(|(b, i)| ConvParams {
                weight: vec![0.0; b.out_channels * i[0] * 9],
                bias: vec![0.0; b.out_channels],
            })
            .collect();
        let d = arch.feature_dim();
        Self {
            convs,
            fc_weight: vec![0.0; arch.classes * d],
            fc_bias: vec![0.0; arch.classes],
            hardness_weight: vec![0.0; d],
            hardness_bias: vec![0.0; 1],
        }
    }

    /// He-uniform conv weights, Glorot-uniform heads, zero biases.
    pub fn init(arch: &Architecture, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(arch);
        for (conv, input) in p.convs.iter_mut().zip(arch.block_inputs()) {
            let bound = libm::sqrt(6.0 / (input[0] * 9) as f64);
            for w in &mut conv.weight {
                *w = rng.random_range(-bound..bound);
            }
        }
        let d = arch.feature_dim();
        let bound = libm::sqrt(6.0 / (d + arch.classes) as f64);
        for w in &mut p.fc_weight {
            *w = rng.random_range(-bound..bound);
        }
        let bound = libm::sqrt(6.0 / (d + 1) as f64);
        for w in &mut p.hardness_weight {
            *w = rng.random_range(-bound..bound);
        }
        p
    }

    /// Named arrays in serialization order.
    pub fn arrays(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), c.weight.as_slice()));
            out.push((format!("conv{}.bias", i + 1), c.bias.as_slice()));
        }
        out.push(("fc.weight".into(), self.fc_weight.as_slice()));
        out.push(("fc.bias".into(), self.fc_bias.as_slice()));
        out.push(("hardness.weight".into(), self.hardness_weight.as_slice()));
        out.push(("hardness.bias".into(), self.hardness_bias.as_slice()));
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out.push(&mut self.hardness_weight);
        out.push(&mut self.hardness_bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|(_, a)| a.iter().all(|v| v.is_finite()))
    }
}

/// Trained classifier, hardness predictor and tap choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub arch: Architecture,
    pub params: Params,
    /// Block whose output is F_h; F_s uses the same block.
    pub tap: usize,
    pub class_names: Vec<String>,
    pub seed: u64,
}

/// Scalar network outputs whose gradient can be taken at the tap layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "class")]
pub enum Selector {
    /// Class posterior `h_p`.
    Posterior(usize),
    /// Pre-softmax class score.
    Logit(usize),
    /// Largest posterior.
    Softmax,
    /// One minus the normalized entropy of the posteriors.
    Certainty,
    /// One minus the hardness prediction.
    Easiness,
    /// A constant output; its gradient is zero everywhere.
    Constant,
}

impl FromStr for Selector {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NetError::UnknownSelector(s.into());
        match s {
            "softmax" => Ok(Self::Softmax),
            "certainty" => Ok(Self::Certainty),
            "easiness" => Ok(Self::Easiness),
            "constant" => Ok(Self::Constant),
            _ => {
                let (kind, class) = s.split_once(':').ok_or_else(bad)?;
                let class = class.parse().map_err(|_| bad())?;
                match kind {
                    "posterior" => Ok(Self::Posterior(class)),
                    "logit" => Ok(Self::Logit(class)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| libm::exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Outputs of the layers above the tap.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
    pub posteriors: Vec<f64>,
    pub hardness_logit: f64,
    /// `s^hp(x)` in `[0, 1]`.
    pub hardness: f64,
}

impl HeadOutput {
    pub fn prediction(&self) -> usize {
        argmax(&self.posteriors).expect("at least two classes")
    }

    /// Value of a scalar selector on these outputs.
    pub fn value(&self, selector: Selector) -> Result<f64, NetError> {
        let classes = self.posteriors.len();
        let check = |p: usize| {
            if p < classes {
                Ok(p)
            } else {
                Err(NetError::ClassOutOfRange { class: p, classes })
            }
        };
        Ok(match selector {
            Selector::Posterior(p) => self.posteriors[check(p)?],
            Selector::Logit(p) => self.logits[check(p)?],
            Selector::Softmax => self.posteriors[self.prediction()],
            Selector::Certainty => crate::attribution::score_certainty(&self.posteriors),
            Selector::Easiness => 1.0 - self.hardness,
            Selector::Constant => 1.0,
        })
    }

    /// Derivatives of `selector` w.r.t. the logits and the hardness logit.
    fn selector_grad(&self, selector: Selector) -> Result<(Vec<f64>, f64), NetError> {
        let h = &self.posteriors;
        let classes = h.len();
        let mut d_logits = vec![0.0; classes];
        let mut d_hardness = 0.0;
        let posterior_grad = |p: usize, d: &mut [f64]| {
            // 1 − h_p as a sum of the other posteriors, which stays exact
            // once h_p rounds to 1
            let rest: f64 = h.iter().enumerate().filter(|&(k, _)| k != p).map(|(_, v)| v).sum();
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = if j == p { h[p] * rest } else { -h[p] * h[j] };
            }
        };
        match selector {
            Selector::Posterior(p) => {
                if p >= classes {
                    return Err(NetError::ClassOutOfRange { class: p, classes });
                }
                posterior_grad(p, &mut d_logits);
            }
            Selector::Logit(p) => {
                if p >= classes {
                    return Err(NetError::ClassOutOfRange { class: p, classes });
                }
                d_logits[p] = 1.0;
            }
            Selector::Softmax => posterior_grad(self.prediction(), &mut d_logits),
            Selector::Certainty => {
                // d/dz_j [Σ h ln h] = h_j (ln h_j − Σ_y h_y ln h_y)
                let xlogx = |v: f64| if v > 0.0 { v * libm::log(v) } else { 0.0 };
                let neg_entropy: f64 = h.iter().map(|&v| xlogx(v)).sum();
                let log_c = libm::log(classes as f64);
                for (j, dj) in d_logits.iter_mut().enumerate() {
                    if h[j] > 0.0 {
                        *dj = (xlogx(h[j]) - h[j] * neg_entropy) / log_c;
                    }
                }
            }
            Selector::Easiness => d_hardness = -self.hardness * (1.0 - self.hardness),
            Selector::Constant => {}
        }
        Ok((d_logits, d_hardness))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockCache {
    input: Vec<f64>,
    /// Post-ReLU conv output, before pooling.
    activated: Vec<f64>,
    pool_argmax: Vec<u32>,
    output: Vec<f64>,
}

/// Cached activations of one forward pass, reused by every tap gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    blocks: Vec<BlockCache>,
    tap: usize,
    tap_shape: [usize; 3],
    pub head: HeadOutput,
}

impl ForwardPass {
    pub fn posteriors(&self) -> &[f64] {
        &self.head.posteriors
    }

    pub fn hardness(&self) -> f64 {
        self.head.hardness
    }

    pub fn prediction(&self) -> usize {
        self.head.prediction()
    }

    /// `[channels, height, width]` of the tap activations.
    pub fn tap_shape(&self) -> [usize; 3] {
        self.tap_shape
    }

    pub fn tap_data(&self) -> &[f64] {
        &self.blocks[self.tap].output
    }

    /// Tap activations `F` as a `D×H×W` tensor.
    pub fn tap_activations(&self) -> Tensor {
        Tensor::new(self.tap_shape.to_vec(), self.tap_data().to_vec())
            .expect("activations are finite")
    }
}

impl ModelBundle {
    pub fn init(
        arch: Architecture,
        class_names: Vec<String>,
        seed: u64,
    ) -> Result<Self, NetError> {
        arch.validate()?;
        if class_names.len() != arch.classes {
            return Err(NetError::ClassCountMismatch {
                model: arch.classes,
                dataset: class_names.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&arch, &mut rng);
        let tap = arch.blocks.len() - 1;
        Ok(Self {
            arch,
            params,
            tap,
            class_names,
            seed,
        })
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn with_tap(mut self, tap: usize) -> Result<Self, NetError> {
        if tap >= self.arch.blocks.len() {
            return Err(NetError::UnknownTap(Architecture::tap_name(tap)));
        }
        self.tap = tap;
        Ok(self)
    }

    /// Checks that every parameter array has the length the architecture implies.
    pub fn validate(&self) -> Result<(), NetError> {
        self.arch.validate()?;
        let expected = Params::zeros(&self.arch);
        for ((name, want), (_, got)) in expected.arrays().iter().zip(self.params.arrays()) {
            if want.len() != got.len() {
                return Err(NetError::ParamLength {
                    name: name.clone(),
                    expected: want.len(),
                    actual: got.len(),
                });
            }
        }
        if expected.convs.len() != self.params.convs.len() {
            return Err(NetError::Architecture("conv parameter count"));
        }
        if self.tap >= self.arch.blocks.len() {
            return Err(NetError::UnknownTap(Architecture::tap_name(self.tap)));
        }
        if self.class_names.len() != self.arch.classes {
            return Err(NetError::ClassCountMismatch {
                model: self.arch.classes,
                dataset: self.class_names.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardPass, NetError> {
        if x.shape() != self.arch.input {
            return Err(NetError::InputShape {
                expected: self.arch.input,
                actual: x.shape().to_vec(),
            });
        }
        Ok(self.forward_slice(x.data()))
    }

    /// Forward pass on a raw `C×H×W` slice of the input shape.
    pub fn forward_slice(&self, x: &[f64]) -> ForwardPass {
        let [c0, h0, w0] = self.arch.input;
        assert_eq!(x.len(), c0 * h0 * w0, "input length");
        let shapes = self.arch.block_inputs();
        let mut blocks = Vec::with_capacity(self.arch.blocks.len());
        let mut current = x.to_vec();
        for (i, block) in self.arch.blocks.iter().enumerate() {
            let cache = self.block_forward(i, block, shapes[i], current);
            current = cache.output.clone();
            blocks.push(cache);
        }
        let head = self.head(&current);
        ForwardPass {
            blocks,
            tap: self.tap,
            tap_shape: self.arch.block_outputs()[self.tap],
            head,
        }
    }

    fn block_forward(
        &self,
        index: usize,
        block: &ConvBlock,
        [c, h, w]: [usize; 3],
        input: Vec<f64>,
    ) -> BlockCache {
        let conv = &self.params.convs[index];
        let mut activated = vec![0.0; block.out_channels * h * w];
        layers::conv3x3_forward(&input, c, h, w, &conv.weight, &conv.bias, &mut activated);
        for v in &mut activated {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let (output, pool_argmax) = if block.pool {
            let n = block.out_channels * (h / 2) * (w / 2);
            let mut out = vec![0.0; n];
            let mut idx = vec![0u32; n];
            layers::maxpool2_forward(&activated, block.out_channels, h, w, &mut out, &mut idx);
            (out, idx)
        } else {
            (activated.clone(), Vec::new())
        };
        BlockCache {
            input,
            activated,
            pool_argmax,
            output,
        }
    }

    /// GAP, classifier head and hardness head on the last block output.
    fn head(&self, last: &[f64]) -> HeadOutput {
        let [d, h, w] = *self.arch.block_outputs().last().expect("validated");
        let hw = (h * w) as f64;
        let pooled: Vec<f64> = (0..d)
            .map(|c| last[c * h * w..(c + 1) * h * w].iter().sum::<f64>() / hw)
            .collect();
        let p = &self.params;
        let logits: Vec<f64> = (0..self.arch.classes)
            .map(|k| p.fc_bias[k] + crate::tensor::dot(&p.fc_weight[k * d..(k + 1) * d], &pooled))
            .collect();
        let posteriors = softmax(&logits);
        let hardness_logit = p.hardness_bias[0] + crate::tensor::dot(&p.hardness_weight, &pooled);
        HeadOutput {
            pooled,
            logits,
            posteriors,
            hardness_logit,
            hardness: sigmoid(hardness_logit),
        }
    }

    /// Re-runs everything above the tap on replacement tap activations.
    pub fn forward_from_tap(&self, tap_values: &[f64]) -> HeadOutput {
        let shapes = self.arch.block_inputs();
        let mut current = tap_values.to_vec();
        for i in self.tap + 1..self.arch.blocks.len() {
            current = self.block_forward(i, &self.arch.blocks[i], shapes[i], current).output;
        }
        self.head(&current)
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize, NetError> {
        Ok(self.forward(x)?.prediction())
    }

    /// Gradient at the last block output given gradients at the logits and
    /// the hardness logit.
    fn head_backward(&self, d_logits: &[f64], d_hardness: f64) -> Vec<f64> {
        let [d, h, w] = *self.arch.block_outputs().last().expect("validated");
        let p = &self.params;
        let mut d_pooled = vec![0.0; d];
        for (k, &g) in d_logits.iter().enumerate() {
            if g != 0.0 {
                for (dp, wk) in d_pooled.iter_mut().zip(&p.fc_weight[k * d..(k + 1) * d]) {
                    *dp += g * wk;
                }
            }
        }
        if d_hardness != 0.0 {
            for (dp, wk) in d_pooled.iter_mut().zip(&p.hardness_weight) {
                *dp += d_hardness * wk;
            }
        }
        let hw = h * w;
        let mut grad = vec![0.0; d * hw];
        for c in 0..d {
            grad[c * hw..(c + 1) * hw].fill(d_pooled[c] / hw as f64);
        }
        grad
    }

    /// Backpropagates through block `index`, returning the gradient at its
    /// input and optionally accumulating parameter gradients.
    fn block_backward(
        &self,
        index: usize,
        cache: &BlockCache,
        grad_output: Vec<f64>,
        param_grads: Option<&mut ConvParams>,
        want_input_grad: bool,
    ) -> Vec<f64> {
        let block = &self.arch.blocks[index];
        let [c, h, w] = self.arch.block_inputs()[index];
        let mut grad_act = if block.pool {
            let mut g = vec![0.0; cache.activated.len()];
            layers::maxpool2_backward(&grad_output, &cache.pool_argmax, &mut g);
            g
        } else {
            grad_output
        };
        for (g, a) in grad_act.iter_mut().zip(&cache.activated) {
            if *a <= 0.0 {
                *g = 0.0;
            }
        }
        let conv = &self.params.convs[index];
        let mut grad_in = if want_input_grad {
            vec![0.0; c * h * w]
        } else {
            Vec::new()
        };
        let (gw, gb) = match param_grads {
            Some(p) => (Some(p.weight.as_mut_slice()), Some(p.bias.as_mut_slice())),
            None => (None, None),
        };
        layers::conv3x3_backward(
            &cache.input,
            c,
            h,
            w,
            &conv.weight,
            &grad_act,
            want_input_grad.then_some(grad_in.as_mut_slice()),
            gw,
            gb,
        );
        grad_in
    }

    /// `∂target/∂F` at the tap layer, shaped like the tap activations.
    pub fn grad_wrt_tap(&self, pass: &ForwardPass, selector: Selector) -> Result<Tensor, NetError> {
        let (d_logits, d_hardness) = pass.head.selector_grad(selector)?;
        let mut grad = self.head_backward(&d_logits, d_hardness);
        for i in (pass.tap + 1..self.arch.blocks.len()).rev() {
            grad = self.block_backward(i, &pass.blocks[i], grad, None, true);
        }
        Ok(Tensor::new(pass.tap_shape.to_vec(), grad)?)
    }

    /// Accumulates classifier gradients for one sample; returns the gradient
    /// w.r.t. nothing (the input gradient is never needed for training).
    pub(crate) fn accumulate_classifier_grads(
        &self,
        pass: &ForwardPass,
        d_logits: &[f64],
        grads: &mut Params,
    ) {
        let d = self.arch.feature_dim();
        for (k, &g) in d_logits.iter().enumerate() {
            grads.fc_bias[k] += g;
            for (gw, x) in grads.fc_weight[k * d..(k + 1) * d].iter_mut().zip(&pass.head.pooled) {
                *gw += g * x;
            }
        }
        let mut grad = self.head_backward(d_logits, 0.0);
        for i in (0..self.arch.blocks.len()).rev() {
            grad = self.block_backward(i, &pass.blocks[i], grad, Some(&mut grads.convs[i]), i > 0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn random_image(seed: u64, shape: [usize; 3]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn posteriors_form_a_simplex() {
        let model = ModelBundle::init(Architecture::standard(4), names(4), 3).unwrap();
        for s in 0..5 {
            let pass = model.forward(&random_image(s, [3, 32, 32])).unwrap();
            let sum: f64 = pass.posteriors().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
            assert!((0.0..=1.0).contains(&pass.hardness()));
        }
    }

    #[test]
    fn zero_weights_give_uniform_posteriors() {
        let arch = Architecture::standard(4);
        let mut model = ModelBundle::init(arch.clone(), names(4), 1).unwrap();
        model.params = Params::zeros(&arch);
        let pass = model.forward(&random_image(9, [3, 32, 32])).unwrap();
        for &p in pass.posteriors() {
            assert_eq!(p, 0.25);
        }
        assert_eq!(pass.prediction(), 0);
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let a = ModelBundle::init(Architecture::standard(3), names(3), 42).unwrap();
        let b = ModelBundle::init(Architecture::standard(3), names(3), 42).unwrap();
        let x = random_image(5, [3, 32, 32]);
        let (pa, pb) = (a.forward(&x).unwrap(), b.forward(&x).unwrap());
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(pa.posteriors()), bits(pb.posteriors()));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let model = ModelBundle::init(Architecture::standard(2), names(2), 0).unwrap();
        let err = model.forward(&Tensor::zeros(vec![3, 16, 16])).unwrap_err();
        assert!(matches!(err, NetError::InputShape { .. }));
    }

    #[test]
    fn predict_breaks_ties_low() {
        let head = |p: [f64; 3]| HeadOutput {
            pooled: vec![],
            logits: vec![0.0; 3],
            posteriors: p.to_vec(),
            hardness_logit: 0.0,
            hardness: 0.5,
        };
        assert_eq!(head([0.1, 0.8, 0.1]).prediction(), 1);
        assert_eq!(head([1.0 / 3.0; 3]).prediction(), 0);
    }

    #[test]
    fn selector_parsing() {
        assert_eq!("softmax".parse::<Selector>().unwrap(), Selector::Softmax);
        assert_eq!("posterior:2".parse::<Selector>().unwrap(), Selector::Posterior(2));
        assert_eq!("logit:0".parse::<Selector>().unwrap(), Selector::Logit(0));
        for bad in ["entropy", "posterior:x", "logit", "hardness:1"] {
            assert_eq!(
                bad.parse::<Selector>().unwrap_err(),
                NetError::UnknownSelector(bad.to_string())
            );
        }
    }

    #[test]
    fn constant_selector_has_zero_gradient() {
        let model = ModelBundle::init(Architecture::standard(3), names(3), 8).unwrap();
        let pass = model.forward(&random_image(1, [3, 32, 32])).unwrap();
        let g = model.grad_wrt_tap(&pass, Selector::Constant).unwrap();
        assert_eq!(g.shape(), &[32, 8, 8]);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_class_selector_is_rejected() {
        let model = ModelBundle::init(Architecture::standard(3), names(3), 8).unwrap();
        let pass = model.forward(&random_image(1, [3, 32, 32])).unwrap();
        assert!(matches!(
            model.grad_wrt_tap(&pass, Selector::Posterior(3)),
            Err(NetError::ClassOutOfRange { class: 3, classes: 3 })
        ));
    }

    /// Single 1×1 tap cell feeding a linear head: the gradient of a logit
    /// with respect to the tap is exactly that class's weight row.
    #[test]
    fn linear_toy_gradient_equals_weights() {
        let arch = Architecture {
            input: [2, 1, 1],
            blocks: vec![ConvBlock { out_channels: 3, pool: false }],
            classes: 2,
        };
        let model = ModelBundle::init(arch, names(2), 11).unwrap();
        let x = Tensor::new(vec![2, 1, 1], vec![0.4, 0.9]).unwrap();
        let pass = model.forward(&x).unwrap();
        for class in 0..2 {
            let g = model.grad_wrt_tap(&pass, Selector::Logit(class)).unwrap();
            assert_eq!(g.data(), &model.params.fc_weight[class * 3..(class + 1) * 3]);
        }
    }

    fn finite_difference_check(model: &ModelBundle, seed: u64, selector: Selector) {
        let x = random_image(seed, model.arch.input);
        let pass = model.forward(&x).unwrap();
        let grad = model.grad_wrt_tap(&pass, selector).unwrap();
        let tap = pass.tap_data().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let eps = 1e-4;
        for _ in 0..5 {
            let i = rng.random_range(0..tap.len());
            let (mut plus, mut minus) = (tap.clone(), tap.clone());
            plus[i] += eps;
            minus[i] -= eps;
            let fp = model.forward_from_tap(&plus).value(selector).unwrap();
            let fm = model.forward_from_tap(&minus).value(selector).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            let g = grad.data()[i];
            let scale = fd.abs().max(g.abs()).max(1e-8);
            assert!((fd - g).abs() / scale < 1e-4, "{selector:?} cell {i}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn tap_gradients_match_finite_differences() {
        let model = ModelBundle::init(Architecture::standard(4), names(4), 21).unwrap();
        for selector in [
            Selector::Posterior(0),
            Selector::Posterior(3),
            Selector::Softmax,
            Selector::Certainty,
            Selector::Easiness,
        ] {
            finite_difference_check(&model, 2, selector);
        }
    }

    #[test]
    fn earlier_tap_gradients_match_finite_differences() {
        let model = ModelBundle::init(Architecture::standard(3), names(3), 5)
            .unwrap()
            .with_tap(1)
            .unwrap();
        for selector in [Selector::Posterior(1), Selector::Certainty, Selector::Easiness] {
            finite_difference_check(&model, 7, selector);
        }
    }

    #[test]
    fn tap_names() {
        let arch = Architecture::standard(2);
        assert_eq!(arch.tap_index("conv3").unwrap(), 2);
        assert_eq!(arch.tap_index("conv1").unwrap(), 0);
        assert!(arch.tap_index("conv4").is_err());
        assert!(arch.tap_index("fc").is_err());
        assert_eq!(arch.block_outputs()[2], [32, 8, 8]);
    }
}
