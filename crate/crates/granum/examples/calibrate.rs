//! Calibration probe for the trained-model acceptance fixtures: trains the
//! small nets on deposition scenes and prints the φ-matching and
//! seam-quality margins.

use std::time::Instant;

use granum::nn::{train, DenoiserNet, TrainConfig, TrainMode};
use granum::sampling::{sample_unconditional, SamplerConfig};
use granum::sched::{NoiseSchedule, ScheduleKind, StepPlan};
use granum::stitch::{blend_average, stitch_sequence, Axis, SeamSpec};
use granum::synth::{make_dataset, SceneSpec};
use granum::{UNetConfig, VoxelGrid};

fn occupancy_profile(grid: &VoxelGrid, axis: usize) -> Vec<f64> {
    let n = grid.dims[axis];
    let mut occ = vec![0.0; n];
    let mut count = vec![0usize; n];
    for z in 0..grid.dims[0] {
        for y in 0..grid.dims[1] {
            for x in 0..grid.dims[2] {
                let i = [z, y, x][axis];
                occ[i] += grid.get(z, y, x);
                count[i] += 1;
            }
        }
    }
    occ.iter().zip(&count).map(|(o, c)| o / *c as f64).collect()
}

fn main() {
    let t0 = Instant::now();
    let steps_arg: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(600);
    let scene = SceneSpec {
        dims: [32, 32, 32],
        min_diameter: 0.018,
        max_diameter: 0.030,
        target_phi: 0.34,
        seed: 100,
        ..SceneSpec::default()
    };
    let block_dims = [16usize, 16, 16];
    let entries = make_dataset(&scene, 8, block_dims).unwrap();
    let dataset: Vec<VoxelGrid> = entries
        .iter()
        .map(|e| granum::archive::decode_entry(e).unwrap())
        .collect();
    let phi_dataset: f64 = dataset
        .iter()
        .map(|g| g.foreground_count() as f64 / g.len() as f64)
        .sum::<f64>()
        / dataset.len() as f64;
    println!("dataset: {} blocks, phi={:.4}", dataset.len(), phi_dataset);

    let net_cfg = |ch: usize| UNetConfig {
        in_channels: ch,
        channel_blocks: vec![4, 8, 16],
        convs_per_block: 2,
        up_mode: granum::nn::UpMode::NearestConv,
        time_embed_dim: 16,
        norm_groups: 2,
    };
    let sched = NoiseSchedule::new(1000, ScheduleKind::SquaredCos).unwrap();
    let batch = 8usize;
    let steps_per_epoch = dataset.len().div_ceil(batch);
    let epochs = steps_arg / steps_per_epoch;
    let tcfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: batch,
        warmup_epochs: 3,
        epochs,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut uncond = DenoiserNet::build(net_cfg(1), 11).unwrap();
    let rep = train(&mut uncond, &dataset, &tcfg, &sched, TrainMode::Unconditional).unwrap();
    println!(
        "uncond: {} steps, loss {:.3} -> {:.3}  [{:.0}s]",
        rep.steps,
        rep.epoch_losses[0],
        rep.epoch_losses.last().unwrap(),
        t0.elapsed().as_secs_f64()
    );
    let mut inp = DenoiserNet::build(net_cfg(3), 12).unwrap();
    let rep_i = train(&mut inp, &dataset, &tcfg, &sched, TrainMode::Inpainting).unwrap();
    println!(
        "inpaint: {} steps, loss {:.3} -> {:.3}  [{:.0}s]",
        rep_i.steps,
        rep_i.epoch_losses[0],
        rep_i.epoch_losses.last().unwrap(),
        t0.elapsed().as_secs_f64()
    );

    // AC11 margin: unconditional phi vs dataset phi.
    let plan = StepPlan::evenly_spaced(1000, 50, 0.0).unwrap();
    let samples = sample_unconditional(
        &uncond,
        &sched,
        &plan,
        block_dims,
        scene.pitch,
        16,
        777,
        SamplerConfig::default(),
    )
    .unwrap();
    let phis: Vec<f64> = samples
        .iter()
        .map(|g| g.foreground_count() as f64 / g.len() as f64)
        .collect();
    let phi_gen = phis.iter().sum::<f64>() / phis.len() as f64;
    println!(
        "phi_gen={phi_gen:.4} phi_dataset={phi_dataset:.4} |diff|={:.4} (limit 0.1)  [{:.0}s]",
        (phi_gen - phi_dataset).abs(),
        t0.elapsed().as_secs_f64()
    );

    // AC7 margin: stitch 21 wide blocks -> 20 seams along z. The nets are
    // fully convolutional, so wider cross-sections than the training blocks
    // are fine and give much smoother per-slice statistics.
    let blocks = sample_unconditional(
        &uncond,
        &sched,
        &plan,
        [16, 32, 32],
        scene.pitch,
        21,
        888,
        SamplerConfig::default(),
    )
    .unwrap();
    let spec = SeamSpec {
        axis: Axis::Z,
        block_depth: 16,
        overlap: 8,
        context: 4,
    };
    let stitched = stitch_sequence(
        &blocks,
        &spec,
        &inp,
        &sched,
        &plan,
        999,
        SamplerConfig::default(),
    )
    .unwrap();
    let blended = blend_average(&blocks, &spec).unwrap();
    for (name, grid) in [("inpaint", &stitched), ("average", &blended)] {
        let profile = occupancy_profile(grid, 0);
        let depth = grid.dims[0];
        let d = 16usize;
        let o = 8usize;
        // Seam i occupies [i*(d-o), i*(d-o)+o).
        let mut seam_slices = vec![false; depth];
        for i in 1..21 {
            let lo = i * (d - o);
            for s in lo.saturating_sub(1)..(lo + o + 1).min(depth - 1) {
                seam_slices[s] = true;
            }
        }
        let interior_deltas: Vec<f64> = (0..depth - 1)
            .filter(|&s| !seam_slices[s] && !seam_slices[s + 1])
            .map(|s| profile[s + 1] - profile[s])
            .collect();
        let mean = interior_deltas.iter().sum::<f64>() / interior_deltas.len() as f64;
        let std = (interior_deltas
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / interior_deltas.len() as f64)
            .sqrt();
        let mut violations = 0;
        let mut max_ratio = 0.0f64;
        for i in 1..21usize {
            let lo = i * (d - o);
            let mut jump = 0.0f64;
            for s in lo.saturating_sub(1)..(lo + o).min(depth - 1) {
                jump = jump.max((profile[s + 1] - profile[s]).abs());
            }
            let ratio = jump / (3.0 * std);
            max_ratio = max_ratio.max(ratio);
            if ratio > 1.0 {
                violations += 1;
            }
        }
        println!(
            "{name}: interior std={std:.4}, max jump ratio={max_ratio:.2} (>1 violates), violations={violations}/20"
        );
    }
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}
