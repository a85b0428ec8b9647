use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uniscale_bench::{model, scene};
use uniscale_core::autodiff::{AdamWConfig, AdamWState, Graph, GroupLr, Tensor};
use uniscale_core::geometry::{make_raymap, Intrinsics};
use uniscale_core::model::ModelConfig;
use uniscale_core::prior::{PriorBundle, PriorConfig};
use uniscale_core::supervision::train_step;

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::uniform(vec![8, 64, 64], -1.0, 1.0, &mut rng);
    let b = Tensor::uniform(vec![64, 64], -1.0, 1.0, &mut rng);
    c.bench_function("matmul 8x64x64 @ 64x64", |bench| {
        bench.iter(|| {
            let mut g = Graph::inference();
            let x = g.constant(a.clone());
            let y = g.constant(b.clone());
            black_box(g.matmul(x, y).unwrap());
        })
    });
}

fn raymap(c: &mut Criterion) {
    let k = Intrinsics::centered(60.0, 60.0, 64, 64).unwrap();
    c.bench_function("raymap 64x64", |bench| bench.iter(|| black_box(make_raymap(black_box(&k)).unwrap())));
}

fn forward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let m = model(cfg.clone());
    let s = scene(&cfg, 2, 1);
    let priors = s.priors().unwrap();
    c.bench_function("forward default 2 frames K+P", |bench| {
        bench.iter(|| black_box(m.predict(&s.images, &priors).unwrap()))
    });
    let none = PriorBundle::empty();
    c.bench_function("forward default 2 frames none", |bench| {
        bench.iter(|| black_box(m.predict(&s.images, &none).unwrap()))
    });
}

fn step(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let m = model(cfg.clone());
    let s = scene(&cfg, 2, 2);
    let priors = PriorConfig {
        inject_any: true,
        use_pose: true,
        use_intrinsics: true,
        supervise_scale: true,
    };
    let lr = GroupLr {
        scale_and_priors: 1e-3,
        backbone: 1e-3,
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("train_step default 2 frames", |bench| {
        bench.iter_batched(
            || (m.clone(), AdamWState::new(m.params())),
            |(mut m, mut state)| {
                black_box(train_step(&mut m, &mut state, &s, &priors, lr, &AdamWConfig::default()).unwrap())
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, matmul, raymap, forward, step);
criterion_main!(benches);
