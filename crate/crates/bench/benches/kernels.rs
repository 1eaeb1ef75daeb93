use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use stacklab::learner::{fit, Architecture};
use stacklab::{
    build_meta, generate_benchmark, mean_ensemble, split_fixed, split_kfold, FeatureEncoder,
    Granularity, Matrix, MetaKind, MetaVariant, Network, StackedLogits, SyntheticSpec, TrainConfig,
};

fn batch(rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0)
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn network(c: &mut Criterion) {
    let base = Network::init(
        Architecture::Mlp {
            widths: vec![32, 64, 4],
        },
        1,
    )
    .unwrap();
    let x = batch(8, 32);
    let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
    c.bench_function("base forward batch 8", |b| {
        b.iter(|| base.forward_batch(black_box(&x)).unwrap())
    });
    c.bench_function("base loss+grad batch 8", |b| {
        b.iter(|| base.loss_and_grad(black_box(&x), &labels).unwrap())
    });

    let meta = build_meta(
        MetaVariant::new(MetaKind::LogitTwoHidden),
        5,
        4,
        FeatureEncoder::raw(32),
        1,
    )
    .unwrap();
    let xs = batch(8, 20);
    c.bench_function("2-hidden meta loss+grad batch 8", |b| {
        b.iter(|| meta.params.loss_and_grad(black_box(&xs), &labels).unwrap())
    });

    let fusion = build_meta(
        MetaVariant::new(MetaKind::Fusion),
        5,
        4,
        FeatureEncoder::raw(32),
        1,
    )
    .unwrap();
    let xf = batch(8, 52);
    c.bench_function("fusion meta loss+grad batch 8", |b| {
        b.iter(|| {
            fusion
                .params
                .loss_and_grad(black_box(&xf), &labels)
                .unwrap()
        })
    });
}

fn training(c: &mut Criterion) {
    let x = batch(1600, 32);
    let labels: Vec<usize> = (0..1600).map(|i| (i * 31) % 4).collect();
    let config = TrainConfig {
        lr_max: 1e-2,
        epochs: 1,
        ..TrainConfig::base_default()
    };
    let net = Network::init(
        Architecture::Mlp {
            widths: vec![32, 64, 4],
        },
        1,
    )
    .unwrap();
    c.bench_function("base epoch 1600 samples", |b| {
        b.iter_batched(
            || net.clone(),
            |mut n| fit(&mut n, &x, &labels, &config, |_, _| {}).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn splitting(c: &mut Criterion) {
    let ds = generate_benchmark(&SyntheticSpec::reference(1), 0, 0)
        .unwrap()
        .dataset;
    c.bench_function("fixed patient split", |b| {
        b.iter(|| split_fixed(&ds, 0.8, Granularity::PatientLevel, 1).unwrap())
    });
    c.bench_function("5-fold patient split", |b| {
        b.iter(|| split_kfold(&ds, 0.8, 5, Granularity::PatientLevel, 1).unwrap())
    });
}

fn ensembling(c: &mut Criterion) {
    let stack = StackedLogits::new(
        batch(2000, 20),
        4,
        (1..=5).collect(),
        (0..2000).map(|i| format!("s{i}")).collect(),
    )
    .unwrap();
    c.bench_function("mean ensemble 2000x5x4", |b| {
        b.iter(|| mean_ensemble(black_box(&stack)))
    });
}

criterion_group!(benches, network, training, splitting, ensembling);
criterion_main!(benches);
