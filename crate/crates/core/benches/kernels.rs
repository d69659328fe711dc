//! Kernel benchmarks: blocked vs naive matmul, and the conv1d batch kernel
//! against its always-sequential reference.
//!
//! Build twice to compare threading modes end to end:
//! `cargo bench -p tcr-core` (parallel, default) vs
//! `cargo bench -p tcr-core --no-default-features` (sequential fallback).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tcr_core::tensor::kernels;

fn fill(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed | 1;
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect()
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &(m, k, n) in &[(64, 200, 200), (512, 200, 512), (1024, 200, 512)] {
        let a = fill(m * k, 3);
        let b = fill(k * n, 5);
        group.bench_with_input(
            BenchmarkId::new("blocked", format!("{m}x{k}x{n}")),
            &(m, k, n),
            |bch, &(m, k, n)| bch.iter(|| kernels::matmul(m, k, n, &a, &b)),
        );
        group.bench_with_input(
            BenchmarkId::new("naive", format!("{m}x{k}x{n}")),
            &(m, k, n),
            |bch, &(m, k, n)| bch.iter(|| kernels::matmul_naive(m, k, n, &a, &b)),
        );
    }
    group.finish();
}

fn bench_conv1d(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv1d");
    let (batch, c_in, len, c_out, k, stride) = (48, 200, 101, 32, 3, 2);
    let x = fill(batch * c_in * len, 7);
    let w = fill(c_out * c_in * k, 9);
    group.bench_function("batched", |bch| {
        bch.iter(|| kernels::conv1d_forward(batch, c_in, len, c_out, k, stride, &x, &w))
    });
    group.bench_function("sequential_reference", |bch| {
        bch.iter(|| kernels::conv1d_forward_seq(batch, c_in, len, c_out, k, stride, &x, &w))
    });
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_conv1d);
criterion_main!(benches);
