//! Inference-time sampling: unconditional generation and inpainting with
//! known-region re-noising and compositing.
//!
//! The samplers are generic over a [`NoisePredictor`], so tests can plug in
//! exact oracles where a trained network is not the point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{DenoiserNet, Tensor};
use crate::sched::{add_noise, ddim_step, ddpm_step, predict_x0, NoiseSchedule, StepPlan};
use crate::voxel::{MaskGrid, ValueKind, VoxelGrid};

/// Anything that maps a noisy input (plus conditioning channels) and a
/// timestep to a noise prediction.
pub trait NoisePredictor: Sync {
    fn in_channels(&self) -> usize;
    /// (n, C, z, y, x) -> (n, 1, z, y, x), same timestep for the batch.
    fn predict(&self, input: &Tensor, t: usize) -> Result<Tensor>;
}

impl NoisePredictor for DenoiserNet {
    fn in_channels(&self) -> usize {
        self.config.in_channels
    }

    fn predict(&self, input: &Tensor, t: usize) -> Result<Tensor> {
        let ts = vec![t; input.shape[0]];
        self.forward(input, &ts)
    }
}

/// Oracle that always returns the exact noise separating the running state
/// from a planted clean signal. Feeding it to the deterministic sampler
/// reproduces the plant bit-for-bit.
pub struct PlantedOracle {
    pub x0: Vec<f64>,
    pub sched: NoiseSchedule,
    pub channels: usize,
}

impl NoisePredictor for PlantedOracle {
    fn in_channels(&self) -> usize {
        self.channels
    }

    fn predict(&self, input: &Tensor, t: usize) -> Result<Tensor> {
        let sp = input.spatial();
        if sp != self.x0.len() || input.shape[0] != 1 {
            return Err(Error::invalid("planted oracle: unexpected input shape"));
        }
        let ab = self.sched.alpha_bar(t);
        let (ca, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
        // Channel 0 is the running noisy state in both sampler layouts.
        let eps = (0..sp)
            .map(|i| (input.data[i] - ca * self.x0[i]) / ce)
            .collect();
        Ok(Tensor::from_vec(
            [1, 1, input.shape[2], input.shape[3], input.shape[4]],
            eps,
        ))
    }
}

/// Predicts zero noise everywhere; useful where only compositing matters.
pub struct ZeroPredictor {
    pub channels: usize,
}

impl NoisePredictor for ZeroPredictor {
    fn in_channels(&self) -> usize {
        self.channels
    }

    fn predict(&self, input: &Tensor, _t: usize) -> Result<Tensor> {
        Ok(Tensor::zeros([
            1,
            1,
            input.shape[2],
            input.shape[3],
            input.shape[4],
        ]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMethod {
    Ddim,
    Ddpm,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub method: SampleMethod,
    /// Clamp the predicted clean sample to [-1, 1] before each step.
    pub clip_x0: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            method: SampleMethod::Ddim,
            clip_x0: true,
        }
    }
}

/// One inpainting job: known context (±1 signal; masked voxels ignored),
/// the mask (1 = generate), a step plan and a seed.
#[derive(Debug, Clone)]
pub struct InpaintTask {
    pub known: VoxelGrid,
    pub mask: MaskGrid,
    pub plan: StepPlan,
    pub seed: u64,
}

/// Per-sample seed of a batched run. Index 0 is the seed itself, so a
/// batch-k run equals k independent single-sample runs seeded with
/// `sample_seed(seed, i)`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    if index == 0 {
        return seed;
    }
    // splitmix64 over the pair keeps streams well separated.
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_plan(plan: &StepPlan, sched: &NoiseSchedule, method: SampleMethod) -> Result<()> {
    if plan.pairs.is_empty() {
        return Err(Error::invalid("empty step plan"));
    }
    if plan.pairs[0].0 >= sched.len() {
        return Err(Error::invalid("plan starts past the schedule length"));
    }
    if method == SampleMethod::Ddpm {
        for &(t, t_prev) in &plan.pairs {
            if t_prev != t as isize - 1 {
                return Err(Error::invalid(
                    "ddpm sampling needs the full consecutive step plan",
                ));
            }
        }
    }
    Ok(())
}

/// One reverse step of the running state, with optional clean-sample clamping
/// folded back into an effective noise estimate.
fn reverse_step(
    x: &[f64],
    eps_hat: &[f64],
    t: usize,
    t_prev: isize,
    eta: f64,
    cfg: SamplerConfig,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let eps_eff: Vec<f64> = if cfg.clip_x0 {
        let x0 = predict_x0(x, eps_hat, t, sched, true)?;
        let ab = sched.alpha_bar(t);
        let (ca, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
        x.iter()
            .zip(&x0)
            .map(|(&xv, &x0v)| (xv - ca * x0v) / ce)
            .collect()
    } else {
        eps_hat.to_vec()
    };
    match cfg.method {
        SampleMethod::Ddim => {
            let z = if eta > 0.0 && t_prev >= 0 {
                Some(gaussian(x.len(), rng))
            } else {
                None
            };
            ddim_step(x, &eps_eff, t, t_prev, eta, z.as_deref(), sched)
        }
        SampleMethod::Ddpm => {
            let z = if t > 0 {
                Some(gaussian(x.len(), rng))
            } else {
                None
            };
            ddpm_step(x, &eps_eff, t, z.as_deref(), sched)
        }
    }
}

fn sample_one(
    net: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    plan: &StepPlan,
    dims: [usize; 3],
    pitch: f64,
    seed: u64,
    cfg: SamplerConfig,
) -> Result<VoxelGrid> {
    let n = dims[0] * dims[1] * dims[2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(n, &mut rng);
    let shape = [1, 1, dims[0], dims[1], dims[2]];
    for &(t, t_prev) in &plan.pairs {
        let input = Tensor::from_vec(shape, x.clone());
        let eps_hat = net.predict(&input, t)?;
        x = reverse_step(&x, &eps_hat.data, t, t_prev, plan.eta, cfg, sched, &mut rng)?;
    }
    VoxelGrid::new(
        dims,
        x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
        pitch,
        [0.0; 3],
        ValueKind::Binary,
    )
}

/// Generate `batch` independent binary grids from seeded Gaussian noise.
pub fn sample_unconditional(
    net: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    plan: &StepPlan,
    dims: [usize; 3],
    pitch: f64,
    batch: usize,
    seed: u64,
    cfg: SamplerConfig,
) -> Result<Vec<VoxelGrid>> {
    if net.in_channels() != 1 {
        return Err(Error::invalid(
            "unconditional sampling needs a 1-channel predictor",
        ));
    }
    check_plan(plan, sched, cfg.method)?;
    (0..batch)
        .into_par_iter()
        .map(|i| sample_one(net, sched, plan, dims, pitch, sample_seed(seed, i), cfg))
        .collect()
}

/// Masked generation with known-region guidance: at every step the known
/// region is re-noised to the step's target time and composited over the
/// candidate; the final step composites the original known data. Known
/// voxels of the binary output are bit-identical to the binarized input.
pub fn inpaint(
    net: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    task: &InpaintTask,
    cfg: SamplerConfig,
) -> Result<VoxelGrid> {
    if net.in_channels() != 3 {
        return Err(Error::invalid("inpainting needs a 3-channel predictor"));
    }
    if task.known.dims != task.mask.dims {
        return Err(Error::invalid("mask dims do not match the known grid"));
    }
    let known = match task.known.kind {
        ValueKind::Signal => task.known.clone(),
        ValueKind::Binary => task.known.to_signal()?,
        ValueKind::Sdf => {
            return Err(Error::UnsupportedValueKind {
                expected: "signal or binary",
                found: "sdf",
            })
        }
    };
    let binarize = |data: &[f64]| -> Result<VoxelGrid> {
        VoxelGrid::new(
            known.dims,
            data.iter()
                .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                .collect(),
            known.pitch,
            known.origin,
            ValueKind::Binary,
        )
    };
    let m: Vec<f64> = task.mask.data.iter().map(|&v| v as f64).collect();
    if task.mask.count_ones() == 0 {
        // No-op by contract; the predictor is never consulted.
        return binarize(&known.data);
    }
    check_plan(&task.plan, sched, cfg.method)?;
    let n = known.len();
    let known_masked: Vec<f64> = known
        .data
        .iter()
        .zip(&m)
        .map(|(&k, &mi)| k * (1.0 - mi))
        .collect();
    let dims = known.dims;
    let shape3 = [1, 3, dims[0], dims[1], dims[2]];
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut x = gaussian(n, &mut rng);
    for &(t, t_prev) in &task.plan.pairs {
        let mut input = Vec::with_capacity(3 * n);
        input.extend_from_slice(&x);
        input.extend_from_slice(&m);
        input.extend_from_slice(&known_masked);
        let eps_hat = net.predict(&Tensor::from_vec(shape3, input), t)?;
        let candidate =
            reverse_step(&x, &eps_hat.data, t, t_prev, task.plan.eta, cfg, sched, &mut rng)?;
        if t_prev >= 0 {
            // Fresh draw per step from the task seed stream.
            let z = gaussian(n, &mut rng);
            let re_noised = add_noise(&known.data, &z, t_prev as usize, sched)?;
            for i in 0..n {
                x[i] = m[i] * candidate[i] + (1.0 - m[i]) * re_noised[i];
            }
        } else {
            for i in 0..n {
                x[i] = m[i] * candidate[i] + (1.0 - m[i]) * known.data[i];
            }
        }
    }
    binarize(&x)
}
