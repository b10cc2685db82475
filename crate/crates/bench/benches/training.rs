use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ugm_core::data::generate_synthetic;
use ugm_core::loglinear::log_distribution;
use ugm_core::training::{e_step, em_fit, initial_params};
use ugm_core::{Hyperparams, SyntheticConfig, WeightVector};

fn benches(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap().dataset;
    let stimulus = data.users()[0].observations[0].stimulus().clone();
    let w = WeightVector(vec![1.0, -0.5, 0.25]);
    c.bench_function("log_distribution/5 candidates", |b| {
        b.iter(|| log_distribution(black_box(&stimulus), black_box(&w)).unwrap())
    });

    let model = initial_params(2, data.feature_dim(), 0).unwrap();
    c.bench_function("e_step/100 users", |b| b.iter(|| e_step(black_box(&data), black_box(&model)).unwrap()));

    let h = Hyperparams {
        restarts: 1,
        ..Hyperparams::default()
    };
    let mut group = c.benchmark_group("em_fit");
    group.sample_size(10);
    group.bench_function("K=2, 100 users, 1 restart", |b| b.iter(|| em_fit(black_box(&data), &h).unwrap()));
    group.finish();
}

criterion_group!(training, benches);
criterion_main!(training);
