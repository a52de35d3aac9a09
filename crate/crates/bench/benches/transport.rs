use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use distinv_core::divergences::{sinkhorn, wasserstein_1d, wasserstein_exact};
use distinv_core::measures::ParticleMeasure;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ParticleMeasure {
    ParticleMeasure::uniform(DMatrix::from_fn(n, d, |_, _| rng.gen_range(-3.0..3.0))).unwrap()
}

fn bench_exact(c: &mut Criterion) {
    let mut group = c.benchmark_group("wasserstein_exact");
    for n in [16usize, 64, 128] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = random_cloud(&mut rng, n, 2);
        let nu = random_cloud(&mut rng, n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| wasserstein_exact(black_box(&mu), black_box(&nu), 2.0).unwrap())
        });
    }
    group.finish();
}

fn bench_sinkhorn(c: &mut Criterion) {
    let mut group = c.benchmark_group("sinkhorn_eps_0.05");
    for n in [64usize, 128] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = random_cloud(&mut rng, n, 2);
        let nu = random_cloud(&mut rng, n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| sinkhorn(black_box(&mu), black_box(&nu), 2.0, 0.05, 2000, 1e-5).unwrap())
        });
    }
    group.finish();
}

fn bench_quantile_1d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mu = random_cloud(&mut rng, 4096, 1);
    let nu = random_cloud(&mut rng, 4096, 1);
    c.bench_function("wasserstein_1d_4096_atoms", |b| {
        b.iter(|| wasserstein_1d(black_box(&(&mu).into()), black_box(&(&nu).into()), 2.0).unwrap())
    });
}

criterion_group!(benches, bench_exact, bench_sinkhorn, bench_quantile_1d);
criterion_main!(benches);
