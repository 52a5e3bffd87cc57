//! Granular assembly synthesis toolkit.
//!
//! Generates physically plausible granular packings as binary 3D voxel
//! grids with a denoising diffusion model, stitches blocks into arbitrarily
//! large samples by masked seam inpainting, segments the result into
//! individual grains and reports packing statistics.
//!
//! Pipeline stages map to modules:
//!
//! - [`voxel`], [`archive`]: grid types and the compressed storage format
//! - [`mesh`], [`vtu`], [`voxelize`], [`edt`]: mesh ingestion to voxel grids
//! - [`sched`], [`nn`], [`sampling`]: diffusion schedules, the UNet noise
//!   predictor with reverse-mode gradients, training and samplers
//! - [`stitch`]: seam inpainting of adjacent blocks into large samples
//! - [`segment`], [`hull`], [`stats`]: watershed grain extraction and
//!   packing/shape statistics
//! - [`synth`]: deposition-based ground-truth scenes for training and tests

pub mod archive;
pub mod edt;
pub mod error;
pub mod geom;
pub mod hull;
pub mod mesh;
pub mod nn;
pub mod sampling;
pub mod sched;
pub mod segment;
pub mod stats;
pub mod stitch;
pub mod synth;
pub mod voxel;
pub mod voxelize;
pub mod vtu;

pub use error::{Error, Result};
pub use nn::{DenoiserNet, TrainConfig, UNetConfig};
pub use sampling::{InpaintTask, SamplerConfig};
pub use sched::{NoiseSchedule, StepPlan};
pub use segment::{GrainSet, LabelGrid};
pub use stats::AssemblyReport;
pub use stitch::SeamSpec;
pub use synth::SceneSpec;
pub use voxel::{MaskGrid, ValueKind, VoxelGrid};
