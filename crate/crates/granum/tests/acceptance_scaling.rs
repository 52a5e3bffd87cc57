//! Acceptance criterion 10: stitching wall-clock scales linearly with the
//! number of blocks. Isolated in its own test target so the timing never
//! shares a process with the training-heavy criteria.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use granum::nn::{DenoiserNet, UpMode};
use granum::sched::{NoiseSchedule, ScheduleKind, StepPlan};
use granum::stitch::{stitch_sequence, Axis, SeamSpec};
use granum::{SamplerConfig, UNetConfig, ValueKind, VoxelGrid};

fn random_block(dims: [usize; 3], seed: u64) -> VoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims[0] * dims[1] * dims[2];
    VoxelGrid::new(
        dims,
        (0..n)
            .map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 })
            .collect(),
        1e-3,
        [0.0; 3],
        ValueKind::Binary,
    )
    .unwrap()
}

#[test]
fn acceptance_10_linear_scaling() {
    let t0 = Instant::now();
    // A real (untrained) 3-channel net keeps the per-seam cost realistic.
    let net = DenoiserNet::build(
        UNetConfig {
            in_channels: 3,
            channel_blocks: vec![4, 8, 16],
            convs_per_block: 2,
            up_mode: UpMode::NearestConv,
            time_embed_dim: 16,
            norm_groups: 2,
        },
        5,
    )
    .unwrap();
    let sched = NoiseSchedule::new(1000, ScheduleKind::SquaredCos).unwrap();
    let plan = StepPlan::evenly_spaced(1000, 50, 0.0).unwrap();
    let dims = [16usize, 16, 16];
    let spec = SeamSpec {
        axis: Axis::Z,
        block_depth: 16,
        overlap: 8,
        context: 4,
    };
    let blocks: Vec<VoxelGrid> = (0..32).map(|i| random_block(dims, i)).collect();
    // Warm-up seam so allocator effects stay out of the measurements.
    stitch_sequence(
        &blocks[..2],
        &spec,
        &net,
        &sched,
        &plan,
        0,
        SamplerConfig::default(),
    )
    .unwrap();
    let ns = [2usize, 4, 8, 16, 32];
    let mut times = Vec::with_capacity(ns.len());
    for &n in &ns {
        let start = Instant::now();
        let out = stitch_sequence(
            &blocks[..n],
            &spec,
            &net,
            &sched,
            &plan,
            7,
            SamplerConfig::default(),
        )
        .unwrap();
        let secs = start.elapsed().as_secs_f64();
        assert_eq!(out.dims[0], n * 8 + 8);
        times.push(secs);
        println!("  N={n:>2}: {secs:.3}s");
    }
    // Least-squares fit of time against N; linear scaling demands R² >= 0.95.
    let n_pts = ns.len() as f64;
    let mean_x = ns.iter().map(|&n| n as f64).sum::<f64>() / n_pts;
    let mean_y = times.iter().sum::<f64>() / n_pts;
    let sxy: f64 = ns
        .iter()
        .zip(&times)
        .map(|(&n, &t)| (n as f64 - mean_x) * (t - mean_y))
        .sum();
    let sxx: f64 = ns.iter().map(|&n| (n as f64 - mean_x).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = ns
        .iter()
        .zip(&times)
        .map(|(&n, &t)| (t - (intercept + slope * n as f64)).powi(2))
        .sum();
    let ss_tot: f64 = times.iter().map(|&t| (t - mean_y).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    println!("  fit: t = {intercept:.3} + {slope:.3}·N, R² = {r2:.4}");
    assert!(r2 >= 0.95, "wall-clock vs N fits a line poorly: R² = {r2:.4}");
    let elapsed = t0.elapsed().as_secs_f64();
    println!("acceptance 10 (linear scaling): PASS in {elapsed:.2}s (limit 1800s)");
    assert!(elapsed < 1800.0);
}
