//! Training loop: seeded batching, mask sampling for inpainting, AdamW with
//! warmup + cosine annealing, and a loss-trajectory report.
//!
//! All randomness comes from one seeded stream consumed in a fixed order
//! (per sample: timestep, noise, mask), and gradient reductions are ordered,
//! so a seeded run is bitwise reproducible at any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{grad_inpaint, grad_simple, Batch, InpaintLossMode};
use super::optim::{lr_at_epoch, AdamW};
use super::tensor::Tensor;
use super::unet::DenoiserNet;
use crate::error::{Error, Result};
use crate::sched::NoiseSchedule;
use crate::voxel::{ValueKind, VoxelGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    /// Masked-loss weight λ for the weighted inpainting objective.
    pub lambda_masked: f64,
    pub seed: u64,
    pub loss_mode: InpaintLossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            weight_decay: 0.01,
            warmup_epochs: 5,
            epochs: 160,
            lambda_masked: 2.0,
            seed: 0,
            loss_mode: InpaintLossMode::Weighted,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if self.lambda_masked < 1.0 {
            return Err(Error::invalid("masked loss weight must be ≥ 1"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Unconditional,
    Inpainting,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
    pub steps: usize,
}

/// Training-time mask distribution: with equal probability either an
/// axis-aligned slab (thickness 25-75% of the axis extent, random axis) or a
/// cube-ish box covering 10-50% of the volume.
pub fn sample_training_mask(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut mask = vec![0.0; dims[0] * dims[1] * dims[2]];
    let fill = |lo: [usize; 3], hi: [usize; 3], mask: &mut Vec<f64>| {
        for z in lo[0]..hi[0] {
            for y in lo[1]..hi[1] {
                for x in lo[2]..hi[2] {
                    mask[(z * dims[1] + y) * dims[2] + x] = 1.0;
                }
            }
        }
    };
    if rng.random::<bool>() {
        let axis = rng.random_range(0..3usize);
        let extent = dims[axis];
        let frac: f64 = rng.random_range(0.25..0.75);
        let thickness = ((extent as f64 * frac).round() as usize).clamp(1, extent);
        let start = rng.random_range(0..=extent - thickness);
        let mut lo = [0, 0, 0];
        let mut hi = dims;
        lo[axis] = start;
        hi[axis] = start + thickness;
        fill(lo, hi, &mut mask);
    } else {
        let f: f64 = rng.random_range(0.1..0.5);
        let u = f.cbrt();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let side = ((dims[a] as f64 * u).round() as usize).clamp(1, dims[a]);
            let start = rng.random_range(0..=dims[a] - side);
            lo[a] = start;
            hi[a] = start + side;
        }
        fill(lo, hi, &mut mask);
    }
    mask
}

/// Train a noise predictor on binary grids (converted to ±1 signals).
pub fn train(
    net: &mut DenoiserNet,
    dataset: &[VoxelGrid],
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    mode: TrainMode,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = dataset[0].dims;
    for g in dataset {
        if g.kind != ValueKind::Binary {
            return Err(Error::UnsupportedValueKind {
                expected: "binary",
                found: g.kind.name(),
            });
        }
        if g.dims != dims {
            return Err(Error::invalid("training grids must share dims"));
        }
    }
    let need_channels = match mode {
        TrainMode::Unconditional => 1,
        TrainMode::Inpainting => 3,
    };
    if net.config.in_channels != need_channels {
        return Err(Error::invalid(format!(
            "net has {} input channels, {mode:?} training needs {need_channels}",
            net.config.in_channels
        )));
    }
    let signals: Vec<Vec<f64>> = dataset
        .iter()
        .map(|g| g.data.iter().map(|&v| v * 2.0 - 1.0).collect())
        .collect();
    let sp = dims[0] * dims[1] * dims[2];
    let shape1 = |n: usize| [n, 1, dims[0], dims[1], dims[2]];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(net.param_count(), cfg.weight_decay);
    let mut step_losses = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg.learning_rate, epoch, cfg.warmup_epochs, cfg.epochs);
        let mut order: Vec<usize> = (0..signals.len()).collect();
        // Fisher-Yates off the seeded stream.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len();
            let mut x0 = Vec::with_capacity(n * sp);
            let mut eps = Vec::with_capacity(n * sp);
            let mut t = Vec::with_capacity(n);
            let mut masks = Vec::with_capacity(n * sp);
            for &si in chunk {
                x0.extend_from_slice(&signals[si]);
                t.push(rng.random_range(0..sched.len()));
                for _ in 0..sp {
                    eps.push(rng.sample::<f64, _>(StandardNormal));
                }
                if mode == TrainMode::Inpainting {
                    masks.extend(sample_training_mask(dims, &mut rng));
                }
            }
            let batch = Batch {
                x0: Tensor::from_vec(shape1(n), x0),
                eps: Tensor::from_vec(shape1(n), eps),
                t,
                mask: (mode == TrainMode::Inpainting)
                    .then(|| Tensor::from_vec(shape1(n), masks)),
            };
            let (loss, grad) = match mode {
                TrainMode::Unconditional => grad_simple(net, &batch, sched)?,
                TrainMode::Inpainting => {
                    grad_inpaint(net, &batch, sched, cfg.lambda_masked, cfg.loss_mode)?
                }
            };
            if !loss.is_finite() {
                let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                return Err(Error::NonFiniteLoss {
                    step,
                    lr,
                    grad_norm,
                });
            }
            opt.step(&mut net.params, &grad, lr);
            step_losses.push(loss);
            epoch_sum += loss;
            epoch_batches += 1;
            step += 1;
        }
        epoch_losses.push(epoch_sum / epoch_batches as f64);
    }
    Ok(TrainReport {
        epoch_losses,
        step_losses,
        steps: step,
    })
}
