//! Microbenchmarks for the hot kernels: posterior means, patch
//! composites, Jacobian columns, and solver steps.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pspc_bench::{bench_dataset, bench_state};
use pspc_core::composite::pspc_denoise;
use pspc_core::denoisers::empirical::{optimal_denoise, patch_posterior_mean, posterior_moments};
use pspc_core::diffusion::TimeSchedule;
use pspc_core::handle::OptimalDenoiser;
use pspc_core::patch::{gather, square_crop_set};
use pspc_core::sampler::{integrate, Solver};

fn posterior_mean(c: &mut Criterion) {
    let mut group = c.benchmark_group("optimal_denoise");
    for &n in &[64usize, 256] {
        let ds = bench_dataset(n, 8, 8, 1);
        let z = bench_state(64, 2.0, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| optimal_denoise(&ds, black_box(&z), 1.0, None).unwrap());
        });
    }
    group.finish();
}

fn patch_mean(c: &mut Criterion) {
    let ds = bench_dataset(64, 8, 8, 1);
    let set = square_crop_set(8, 8, 3).unwrap();
    let crop = &set.crops()[0];
    let z = bench_state(64, 2.0, 3);
    let z_patch = gather(crop, ds.shape(), &z).unwrap();
    c.bench_function("patch_posterior_mean_3x3", |b| {
        b.iter(|| patch_posterior_mean(&ds, crop, black_box(&z_patch), 1.0, None).unwrap());
    });
}

fn composite(c: &mut Criterion) {
    let ds = bench_dataset(64, 8, 8, 1);
    let z = bench_state(64, 2.0, 4);
    let mut group = c.benchmark_group("pspc_square");
    for &s in &[1usize, 3, 5] {
        let set = square_crop_set(8, 8, s).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(s), &s, |b, _| {
            b.iter(|| pspc_denoise(&ds, black_box(&z), 1.0, &set, None).unwrap());
        });
    }
    group.finish();
}

fn jacobian_column(c: &mut Criterion) {
    let ds = bench_dataset(64, 8, 8, 5);
    let z = bench_state(64, 2.0, 6);
    let moments = posterior_moments(&ds, &z, 1.0, None).unwrap();
    c.bench_function("jacobian_column", |b| {
        b.iter(|| moments.jacobian_column(&ds, black_box(7)).unwrap());
    });
}

fn heun_step(c: &mut Criterion) {
    let ds = Arc::new(bench_dataset(64, 8, 8, 7));
    let den = OptimalDenoiser::new(Arc::clone(&ds), None);
    let schedule = TimeSchedule::new(vec![80.0, 40.0]).unwrap();
    let z = bench_state(64, 80.0, 8);
    c.bench_function("heun_step", |b| {
        b.iter(|| integrate(&den, &schedule, black_box(&z), Solver::Heun, false).unwrap());
    });
}

criterion_group!(
    kernels,
    posterior_mean,
    patch_mean,
    composite,
    jacobian_column,
    heun_step
);
criterion_main!(kernels);
