//! Compare the data-parallel build (default features) with the sequential
//! fallback (`--no-default-features`) by running this bench under both.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use reldep::kernels::{KernelConfig, KernelSpec};
use reldep::reltest::dependent_test;
use reldep::synthbench::{power_curve, sample_synthetic, SynthConfig};

fn mode() -> &'static str {
    if reldep::par::is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn gram(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("gram_median_gaussian/{}", mode()));
    for m in [500, 1000, 2000] {
        let j = sample_synthetic(&SynthConfig::default().with_m(m)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &j, |b, j| {
            b.iter(|| KernelSpec::MEDIAN_GAUSSIAN.gram(black_box(j.x())).unwrap())
        });
    }
    group.finish();
}

fn dependent(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("dependent_test/{}", mode()));
    group.sample_size(20);
    let kernels = KernelConfig::default();
    for m in [500, 1000, 2000] {
        let j = sample_synthetic(&SynthConfig::default().with_m(m)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &j, |b, j| {
            b.iter(|| dependent_test(black_box(j), &kernels, 0.05).unwrap())
        });
    }
    group.finish();
}

fn power_trials(c: &mut Criterion) {
    let mut group = c.benchmark_group(format!("power_curve/{}", mode()));
    group.sample_size(10);
    let base = SynthConfig::default().with_m(300);
    group.bench_function("3x8_trials_m300", |b| {
        b.iter(|| power_curve(black_box(&[0.5, 1.0, 1.5]), &base, 8, 0.05).unwrap())
    });
    group.finish();
}

criterion_group!(benches, gram, dependent, power_trials);
criterion_main!(benches);
