//! Run configuration: one JSON document mirroring every stage's parameters.
//!
//! Unknown keys are rejected, every field has a documented default, and each
//! run echoes its fully resolved configuration so the echo can be re-fed to
//! reproduce the run byte for byte.

use granum::sampling::SampleMethod;
use granum::sched::ScheduleKind;
use granum::stitch::Axis;
use granum::{SceneSpec, TrainConfig, UNetConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t: usize,
    pub kind: ScheduleKindCfg,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKindCfg {
    Squaredcos,
    Linear,
}

impl From<ScheduleKindCfg> for ScheduleKind {
    fn from(k: ScheduleKindCfg) -> Self {
        match k {
            ScheduleKindCfg::Squaredcos => ScheduleKind::SquaredCos,
            ScheduleKindCfg::Linear => ScheduleKind::Linear,
        }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            t: 1000,
            kind: ScheduleKindCfg::Squaredcos,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerPlanConfig {
    /// Inference steps (evenly spaced out of schedule.t).
    pub steps: usize,
    pub eta: f64,
    pub method: SampleMethod,
    pub clip_x0: bool,
}

impl Default for SamplerPlanConfig {
    fn default() -> Self {
        SamplerPlanConfig {
            steps: 50,
            eta: 0.0,
            method: SampleMethod::Ddim,
            clip_x0: true,
        }
    }
}

impl SamplerPlanConfig {
    pub fn sampler(&self) -> granum::SamplerConfig {
        granum::SamplerConfig {
            method: self.method,
            clip_x0: self.clip_x0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeamConfig {
    pub axis: Axis,
    pub overlap: usize,
    pub context: usize,
}

impl Default for SeamConfig {
    fn default() -> Self {
        SeamConfig {
            axis: Axis::X,
            overlap: 16,
            context: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub min_distance: f64,
    pub min_height: f64,
    pub use_valleys: bool,
    pub valley_weight: f64,
    pub erosion_steps: usize,
    pub smoothing_iters: usize,
    pub contact_tolerance: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            min_distance: granum::segment::DEFAULT_MIN_DISTANCE,
            min_height: granum::segment::DEFAULT_MIN_HEIGHT,
            use_valleys: false,
            valley_weight: granum::segment::DEFAULT_VALLEY_WEIGHT,
            erosion_steps: 0,
            smoothing_iters: 0,
            contact_tolerance: granum::stats::DEFAULT_CONTACT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scenes synthesized for the training set.
    pub scene_count: usize,
    /// Blocks generated unconditionally.
    pub sample_count: usize,
    /// How many of those blocks the stitch stage joins.
    pub stitch_blocks: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scene_count: 4,
            sample_count: 8,
            stitch_blocks: 4,
        }
    }
}

/// The whole run configuration; `Default` is the desk preset
/// (16x32x32 blocks, widths [8,16,32,32], T=1000, 50 inference steps).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 keeps the library default. 1 guarantees a fully
    /// serial run (results are thread-count invariant either way).
    pub threads: usize,
    pub schedule: ScheduleConfig,
    pub net: UNetConfig,
    pub train: TrainConfig,
    pub sampler: SamplerPlanConfig,
    pub seam: SeamConfig,
    pub segmentation: SegmentationConfig,
    pub scene: SceneSpec,
    pub block_dims: [usize; 3],
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            schedule: ScheduleConfig::default(),
            net: UNetConfig::desk(1),
            train: TrainConfig::default(),
            sampler: SamplerPlanConfig::default(),
            seam: SeamConfig::default(),
            segmentation: SegmentationConfig::default(),
            scene: SceneSpec::default(),
            block_dims: [16, 32, 32],
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
