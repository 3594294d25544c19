use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use embodiflow::geometry::{trimmed_icp, IcpConfig, PointCloud, Pose};
use embodiflow::harness::Trainer;
use embodiflow::numerics::{Tape, Tensor, Var};
use embodiflow_bench::{frozen_backbone, small_config, small_dataset};

fn tape_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::randn([128, 64], 1.0, &mut rng);
    let b = Tensor::randn([64, 64], 1.0, &mut rng);
    c.bench_function("matmul 128x64x64 forward+backward", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let (x, w) = (tape.param(a.clone()), tape.param(b.clone()));
            let g = tape.backward(x.matmul(w).square().sum()).unwrap();
            black_box(g);
        })
    });
    let q = Tensor::randn([128, 16], 1.0, &mut rng);
    c.bench_function("attention 128 tokens forward+backward", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let (x, k, v) = (tape.param(q.clone()), tape.param(q.clone()), tape.param(q.clone()));
            let g = tape.backward(Var::attention(x, k, v).square().sum()).unwrap();
            black_box(g);
        })
    });
}

fn backbone_velocity(c: &mut Criterion) {
    let cfg = small_config();
    let backbone = frozen_backbone(&cfg);
    let layout = cfg.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn([layout.tokens(), layout.token_dim()], 1.0, &mut rng);
    c.bench_function("backbone velocity, one 8-frame video", |bench| {
        bench.iter(|| black_box(backbone.velocity(&x, &[0.5]).unwrap()))
    });
}

fn training_step(c: &mut Criterion) {
    let cfg = small_config();
    let ds = small_dataset(&cfg);
    let mut trainer = Trainer::new(cfg.clone(), frozen_backbone(&cfg)).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("train_step, 12-sample batch", |bench| {
        bench.iter(|| black_box(trainer.train_step(&ds).unwrap()))
    });
    group.finish();
}

fn icp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<Vector3<f64>> =
        (0..500).map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2))).collect();
    let src = PointCloud::new(pts, 0);
    let truth = Pose::new(Vector3::new(0.03, -0.02, 0.05), UnitQuaternion::from_euler_angles(0.1, -0.05, 0.15));
    let dst = src.transformed(&truth);
    let cfg = IcpConfig::default();
    c.bench_function("trimmed ICP, 500 points", |bench| bench.iter(|| black_box(trimmed_icp(&src, &dst, &cfg).unwrap())));
}

criterion_group!(benches, tape_kernels, backbone_velocity, training_step, icp);
criterion_main!(benches);
