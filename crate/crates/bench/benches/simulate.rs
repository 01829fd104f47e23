use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, Criterion};
use delaytherm::model::ReducedParams;
use delaytherm::simulate::{trajectory_stats, SimConfig};

fn integration(c: &mut Criterion) {
    let r = ReducedParams::new(0.36, 10.0, 2.04 * PI).unwrap();
    let cfg = SimConfig::new(r, 2024).with_duration(200.0);
    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);
    group.bench_function("trajectory_stats", |b| {
        b.iter(|| trajectory_stats(&cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, integration);
criterion_main!(benches);
