//! Criterion benchmarks for the hot paths: schedule algebra, the distance
//! transform, watershed, UNet forward, archive codec and seam compositing.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use granum::archive::{decode_entry, encode_entry, Metadata};
use granum::edt::squared_distance_to;
use granum::nn::{DenoiserNet, Tensor, UNetConfig, UpMode};
use granum::sampling::{inpaint, InpaintTask, SamplerConfig, ZeroPredictor};
use granum::sched::{add_noise, NoiseSchedule, ScheduleKind, StepPlan};
use granum::segment::{distance_map, find_markers, watershed};
use granum::voxel::{MaskGrid, ValueKind, VoxelGrid};

fn random_binary(dims: [usize; 3], fill: f64, seed: u64) -> VoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims[0] * dims[1] * dims[2];
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < fill { 1.0 } else { 0.0 })
        .collect();
    VoxelGrid::new(dims, data, 1e-3, [0.0; 3], ValueKind::Binary).unwrap()
}

fn sphere_pack(dims: [usize; 3]) -> VoxelGrid {
    let mut g = VoxelGrid::zeros(dims, 1e-3, [0.0; 3]);
    for cz in [8.0, 24.0] {
        for cy in [8.0, 24.0] {
            for cx in [8.0, 24.0] {
                for z in 0..dims[0] {
                    for y in 0..dims[1] {
                        for x in 0..dims[2] {
                            let d2 = (z as f64 - cz).powi(2)
                                + (y as f64 - cy).powi(2)
                                + (x as f64 - cx).powi(2);
                            if d2 <= 49.0 {
                                g.set(z, y, x, 1.0);
                            }
                        }
                    }
                }
            }
        }
    }
    g
}

fn bench_schedule(c: &mut Criterion) {
    c.bench_function("schedule_1000_squaredcos", |b| {
        b.iter(|| NoiseSchedule::new(black_box(1000), ScheduleKind::SquaredCos).unwrap())
    });
    let sched = NoiseSchedule::new(1000, ScheduleKind::SquaredCos).unwrap();
    let x0 = vec![0.5; 16 * 32 * 32];
    let eps = vec![0.1; 16 * 32 * 32];
    c.bench_function("add_noise_16x32x32", |b| {
        b.iter(|| add_noise(black_box(&x0), black_box(&eps), 500, &sched).unwrap())
    });
}

fn bench_edt_watershed(c: &mut Criterion) {
    let g = random_binary([64, 64, 64], 0.4, 3);
    let src: Vec<bool> = g.data.iter().map(|&v| v == 0.0).collect();
    c.bench_function("edt_64cubed", |b| {
        b.iter(|| squared_distance_to([64, 64, 64], black_box(&src)).unwrap())
    });
    let pack = sphere_pack([32, 32, 32]);
    c.bench_function("watershed_32cubed", |b| {
        b.iter(|| {
            let dist = distance_map(&pack).unwrap();
            let markers = find_markers(&dist, pack.dims, 3.0, 1.5);
            watershed(&dist, &markers, &pack, None, 0.5).unwrap()
        })
    });
}

fn bench_unet_forward(c: &mut Criterion) {
    let net = DenoiserNet::build(
        UNetConfig {
            in_channels: 1,
            channel_blocks: vec![4, 8, 16],
            convs_per_block: 2,
            up_mode: UpMode::NearestConv,
            time_embed_dim: 16,
            norm_groups: 2,
        },
        0,
    )
    .unwrap();
    let x = Tensor::zeros([1, 1, 16, 16, 16]);
    c.bench_function("unet_forward_16cubed", |b| {
        b.iter(|| net.forward(black_box(&x), &[500]).unwrap())
    });
}

fn bench_archive(c: &mut Criterion) {
    let g = random_binary([16, 32, 32], 0.4, 9);
    c.bench_function("archive_encode_16x32x32", |b| {
        b.iter(|| encode_entry(black_box(&g), "g", Metadata::new()).unwrap())
    });
    let e = encode_entry(&g, "g", Metadata::new()).unwrap();
    c.bench_function("archive_decode_16x32x32", |b| {
        b.iter(|| decode_entry(black_box(&e)).unwrap())
    });
}

fn bench_inpaint_compositing(c: &mut Criterion) {
    let sched = NoiseSchedule::new(1000, ScheduleKind::SquaredCos).unwrap();
    let known = random_binary([16, 16, 16], 0.4, 5).to_signal().unwrap();
    let mut mask = MaskGrid::zeros([16, 16, 16]);
    for v in mask.data[1024..3072].iter_mut() {
        *v = 1;
    }
    let task = InpaintTask {
        known,
        mask,
        plan: StepPlan::evenly_spaced(1000, 50, 0.0).unwrap(),
        seed: 1,
    };
    c.bench_function("inpaint_50_steps_zero_net", |b| {
        b.iter(|| {
            inpaint(
                &ZeroPredictor { channels: 3 },
                &sched,
                black_box(&task),
                SamplerConfig::default(),
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_schedule,
    bench_edt_watershed,
    bench_unet_forward,
    bench_archive,
    bench_inpaint_compositing
);
criterion_main!(benches);
