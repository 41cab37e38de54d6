//! Mini-batch training with model selection on a validation split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Adamax, Network, NnError, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Multiply the learning rate by 0.5 every `every` epochs.
    StepHalve { every: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f32,
    pub lr_schedule: LrSchedule,
    /// Rate applied by the standard architectures' dropout layers; layers
    /// carry their own rate, this records the configured default.
    pub dropout_rate: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            lr_initial: 0.003,
            lr_schedule: LrSchedule::StepHalve { every: 25 },
            dropout_rate: 0.2,
            seed: 1,
        }
    }
}

pub struct TrainData<'a> {
    pub train_images: &'a Tensor,
    pub train_labels: &'a [u8],
    pub val_images: &'a Tensor,
    pub val_labels: &'a [u8],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f32,
    pub val_accuracy: f32,
}

/// Row-wise argmax over a `[n, classes]` score matrix. Ties resolve to the
/// lowest class index.
pub fn argmax_rows(scores: &Tensor) -> Vec<u8> {
    let classes = scores.dim(1);
    scores
        .data()
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

/// Fraction of `images` classified as their label, evaluated in batches.
pub fn evaluate(net: &Network, images: &Tensor, labels: &[u8]) -> Result<f32, NnError> {
    let n = images.dim(0);
    assert_eq!(n, labels.len(), "label count mismatch");
    if n == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let step = 256;
    for lo in (0..n).step_by(step) {
        let hi = (lo + step).min(n);
        let scores = net.scores(&images.slice_rows(lo, hi))?;
        let preds = argmax_rows(&scores);
        correct += preds
            .iter()
            .zip(&labels[lo..hi])
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f32 / n as f32)
}

/// Train `net` in place. Batches are drawn in a seed-determined shuffled
/// order each epoch; after every epoch the validation accuracy decides
/// whether the current weights replace the best snapshot, and the snapshot
/// is written back at the end. Returns per-epoch statistics.
pub fn train(
    net: &mut Network,
    data: &TrainData,
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, NnError> {
    assert!(config.batch_size >= 1, "batch size must be positive");
    assert!(config.lr_initial > 0.0, "learning rate must be positive");
    let n = data.train_images.dim(0);
    assert_eq!(n, data.train_labels.len(), "label count mismatch");
    if n == 0 {
        return Err(NnError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adamax::new(config.lr_initial);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f32, Network)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        let lr = match config.lr_schedule {
            LrSchedule::Constant => config.lr_initial,
            LrSchedule::StepHalve { every } => {
                config.lr_initial * 0.5f32.powi((epoch / every.max(1)) as i32)
            }
        };
        opt.set_lr(lr);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = gather_rows(data.train_images, chunk);
            let targets: Vec<u8> = chunk.iter().map(|&i| data.train_labels[i]).collect();
            let loss = net.train_step(&batch, &targets, &mut opt, &mut rng)?;
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch, batch: batch_idx });
            }
            loss_sum += loss as f64;
            batches += 1;
        }
        let val_accuracy = evaluate(net, data.val_images, data.val_labels)?;
        history.push(EpochStats {
            epoch,
            lr,
            train_loss: (loss_sum / batches.max(1) as f64) as f32,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, net.clone()));
        }
    }
    if let Some((_, snapshot)) = best {
        *net = snapshot;
    }
    Ok(history)
}

fn gather_rows(images: &Tensor, idx: &[usize]) -> Tensor {
    let row: usize = images.shape()[1..].iter().product();
    let mut shape = images.shape().to_vec();
    shape[0] = idx.len();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&images.data()[i * row..(i + 1) * row]);
    }
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn toy_data(seed: u64, n: usize) -> (Tensor, Vec<u8>) {
        // Two linearly separable blobs in 4 dimensions.
        let mut s = seed | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f32 / (1u64 << 53) as f32 - 0.5
        };
        let mut data = Vec::with_capacity(n * 4);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = (i % 2) as u8;
            let center = if class == 0 { -1.0 } else { 1.0 };
            for _ in 0..4 {
                data.push(center + next());
            }
            labels.push(class);
        }
        (Tensor::from_vec(&[n, 4], data), labels)
    }

    fn toy_net(seed: u64) -> Network {
        let specs = [
            LayerSpec::Dense { out_units: 8 },
            LayerSpec::BatchNorm,
            LayerSpec::Sign,
            LayerSpec::Dense { out_units: 2 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::init(&[4], &specs, &mut rng).unwrap()
    }

    #[test]
    fn toy_problem_trains_to_high_accuracy() {
        let (train_x, train_y) = toy_data(0x1, 400);
        let (val_x, val_y) = toy_data(0x2, 100);
        let mut net = toy_net(7);
        let config = TrainConfig { epochs: 15, batch_size: 16, ..TrainConfig::default() };
        let data = TrainData {
            train_images: &train_x,
            train_labels: &train_y,
            val_images: &val_x,
            val_labels: &val_y,
        };
        let history = train(&mut net, &data, &config).unwrap();
        assert_eq!(history.len(), 15);
        let acc = evaluate(&net, &val_x, &val_y).unwrap();
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn training_is_reproducible() {
        let (train_x, train_y) = toy_data(0x3, 200);
        let (val_x, val_y) = toy_data(0x4, 50);
        let config = TrainConfig { epochs: 3, batch_size: 32, ..TrainConfig::default() };
        let data = TrainData {
            train_images: &train_x,
            train_labels: &train_y,
            val_images: &val_x,
            val_labels: &val_y,
        };
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut net = toy_net(9);
            let history = train(&mut net, &data, &config).unwrap();
            let weights: Vec<f32> = match &net.layers[0] {
                crate::nn::Layer::Dense { weights } => weights.data().to_vec(),
                _ => unreachable!(),
            };
            runs.push((history.last().unwrap().val_accuracy, weights));
        }
        assert_eq!(runs[0].0, runs[1].0);
        assert_eq!(runs[0].1, runs[1].1);
    }

    #[test]
    fn lr_schedule_halves() {
        let (train_x, train_y) = toy_data(0x5, 64);
        let config = TrainConfig {
            epochs: 4,
            batch_size: 64,
            lr_schedule: LrSchedule::StepHalve { every: 2 },
            ..TrainConfig::default()
        };
        let data = TrainData {
            train_images: &train_x,
            train_labels: &train_y,
            val_images: &train_x,
            val_labels: &train_y,
        };
        let mut net = toy_net(3);
        let history = train(&mut net, &data, &config).unwrap();
        assert_eq!(history[0].lr, 0.003);
        assert_eq!(history[1].lr, 0.003);
        assert_eq!(history[2].lr, 0.0015);
        assert_eq!(history[3].lr, 0.0015);
    }
}
