use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, ModelBundle, NetError, Params};
use crate::dataset::LabeledDataset;

/// Minibatch SGD with momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Step size for the hardness head, which sees a much sparser target.
    pub hardness_learning_rate: f64,
    /// Multiplies both learning rates after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            hardness_learning_rate: 0.05,
            lr_decay: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean classifier cross-entropy over the epoch.
    pub loss: f64,
    /// Mean binary cross-entropy of the hardness head.
    pub hardness_loss: f64,
    /// Fraction of samples classified correctly while training.
    pub accuracy: f64,
}

pub fn train(
    dataset: &LabeledDataset,
    arch: &Architecture,
    config: &TrainConfig,
    seed: u64,
) -> Result<ModelBundle, NetError> {
    train_with_progress(dataset, arch, config, seed, &mut |_| {})
}

/// Trains the classifier with cross-entropy and, jointly, the hardness head
/// to predict whether the classifier currently misclassifies each sample.
/// The hardness loss never reaches the classifier weights.
pub fn train_with_progress(
    dataset: &LabeledDataset,
    arch: &Architecture,
    config: &TrainConfig,
    seed: u64,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<ModelBundle, NetError> {
    if dataset.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    if arch.classes != dataset.classes() {
        return Err(NetError::ClassCountMismatch {
            model: arch.classes,
            dataset: dataset.classes(),
        });
    }
    if arch.input != dataset.image_shape() {
        return Err(NetError::InputShape {
            expected: arch.input,
            actual: dataset.image_shape().to_vec(),
        });
    }
    let mut model = ModelBundle::init(arch.clone(), dataset.class_names().to_vec(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut velocity = Params::zeros(arch);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batch_size = config.batch_size.max(1);
    let mut lr = config.learning_rate;
    let mut hardness_lr = config.hardness_learning_rate;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hardness_sum, mut correct) = (0.0, 0.0, 0usize);
        for batch in order.chunks(batch_size) {
            let mut grads = Params::zeros(arch);
            for &i in batch {
                let label = dataset.label(i);
                let pass = model.forward_slice(dataset.image_data(i));
                let h = &pass.head.posteriors;
                loss_sum -= libm::log(h[label].max(1e-300));
                let predicted = pass.prediction();
                if predicted == label {
                    correct += 1;
                }
                let mut d_logits = h.clone();
                d_logits[label] -= 1.0;
                model.accumulate_classifier_grads(&pass, &d_logits, &mut grads);

                // Hardness head: BCE against the misclassification indicator.
                // Only the head's own parameters receive this gradient.
                let target = if predicted == label { 0.0 } else { 1.0 };
                let s = pass.head.hardness.clamp(1e-12, 1.0 - 1e-12);
                hardness_sum -= target * libm::log(s) + (1.0 - target) * libm::log(1.0 - s);
                let d_hl = pass.head.hardness - target;
                grads.hardness_bias[0] += d_hl;
                for (g, x) in grads.hardness_weight.iter_mut().zip(&pass.head.pooled) {
                    *g += d_hl * x;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let n_arrays = grads.arrays().len();
            for (k, ((p, v), g)) in model
                .params
                .arrays_mut()
                .into_iter()
                .zip(velocity.arrays_mut())
                .zip(grads.arrays_mut())
                .enumerate()
            {
                // hardness.weight and hardness.bias are the last two arrays
                let step = if k + 2 >= n_arrays { hardness_lr } else { lr };
                for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                    *vi = config.momentum * *vi + gi * scale;
                    *pi -= step * *vi;
                }
            }
        }
        let n = dataset.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: loss_sum / n,
            hardness_loss: hardness_sum / n,
            accuracy: correct as f64 / n,
        };
        if !stats.loss.is_finite() || !stats.hardness_loss.is_finite() || !model.params.is_finite() {
            return Err(NetError::Diverged { epoch });
        }
        progress(&stats);
        lr *= config.lr_decay;
        hardness_lr *= config.lr_decay;
    }
    Ok(model)
}
