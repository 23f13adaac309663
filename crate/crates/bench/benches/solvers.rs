use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use herglotz_bench::{bent_curve, quadratic_data, wavy_model};
use herglotz_core::charflow::shoot;
use herglotz_core::evolve::evolve_negative;
use herglotz_core::varmin::{action, gradient};
use herglotz_core::{minimize, EvolveOptions, MinimizeOptions, ModelSpec, ShootOptions};

fn bench_action(c: &mut Criterion) {
    let m = wavy_model(2);
    let mut group = c.benchmark_group("action");
    for n in [64, 256, 1024] {
        let curve = bent_curve(2, n);
        group.bench_with_input(BenchmarkId::new("value", n), &curve, |b, curve| {
            b.iter(|| action(&m, black_box(curve), 0.1).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("gradient", n), &curve, |b, curve| {
            b.iter(|| gradient(&m, black_box(curve), 0.1).unwrap())
        });
    }
    group.finish();
}

fn bench_minimize(c: &mut Criterion) {
    let m = wavy_model(1);
    let opts = MinimizeOptions {
        n: 64,
        ..MinimizeOptions::default()
    };
    c.bench_function("minimize/1d_n64", |b| {
        b.iter(|| minimize(&m, 0.0, 1.0, &[0.0], black_box(&[1.0]), 0.0, &opts).unwrap())
    });
}

fn bench_shoot(c: &mut Criterion) {
    let m = wavy_model(2);
    let opts = ShootOptions::default();
    c.bench_function("shoot/2d_256_steps", |b| {
        b.iter(|| shoot(&m, 0.0, 1.0, &[0.0, 0.0], black_box(&[1.0, -0.5]), 0.0, &opts).unwrap())
    });
}

fn bench_evolve(c: &mut Criterion) {
    let m = ModelSpec::free(1);
    let phi = quadratic_data(121);
    let opts = EvolveOptions::default();
    let mut group = c.benchmark_group("evolve");
    group.sample_size(10);
    group.bench_function("hopf_lax_121", |b| {
        b.iter(|| evolve_negative(&m, black_box(&phi), 0.0, 1.0, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_action, bench_minimize, bench_shoot, bench_evolve);
criterion_main!(benches);
