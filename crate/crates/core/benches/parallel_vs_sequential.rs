use concept_cmdp::cmdp::{build_contextual_gridworld, build_random_cmdp, seek_avoid_spec};
use concept_cmdp::learner::{learn_exhaustive, learn_gradient, LearnConfig};
use concept_cmdp::solver::{solve, SolveOptions};
use concept_cmdp::suite::{verify_bounds_suite, SizeSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;

// A one-thread pool stands in for the sequential build so both variants run
// from the same binary. Build with --no-default-features for the true fallback.
fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("sequential", ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn suite(c: &mut Criterion) {
    let mut g = c.benchmark_group("verify_bounds_suite");
    g.sample_size(10);
    let size = SizeSpec::default();
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new(name, 40), |b| {
            b.iter(|| pool.install(|| verify_bounds_suite(40, size, 11, false).unwrap()))
        });
    }
    g.finish();
}

fn exhaustive(c: &mut Criterion) {
    let mut g = c.benchmark_group("learn_exhaustive");
    g.sample_size(10);
    let m = build_random_cmdp(8, 3, 2, 0.9, 5).unwrap();
    let sol = solve(&m, &SolveOptions::default()).unwrap();
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new(name, "8x3"), |b| {
            b.iter(|| pool.install(|| learn_exhaustive(&m, &sol, 3).unwrap()))
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let mut g = c.benchmark_group("learn_gradient");
    g.sample_size(10);
    let m = build_contextual_gridworld(&seek_avoid_spec(2)).unwrap();
    let sol = solve(&m, &SolveOptions::default()).unwrap();
    let cfg = LearnConfig::default();
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new(name, "seek_avoid"), |b| {
            b.iter(|| pool.install(|| learn_gradient(&m, &sol, 6, &cfg).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, suite, exhaustive, gradient);
criterion_main!(benches);
