//! Parallel vs sequential throughput of the hot paths: forest fitting,
//! cross-fitted pseudo-outcome construction, and batch bound prediction.
//!
//! Both modes run the same code; the sequential numbers come from a
//! one-thread pool, so the comparison isolates rayon's scheduling gain.
//! (Building with `--no-default-features` removes rayon entirely and always
//! behaves like the one-thread rows.)

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use blearner_core::blearner::{fit_blearner, BLearnerConfig};
use blearner_core::dgp;
use blearner_core::domain::make_sensitivity;
use blearner_core::exec;
use blearner_core::learners::{ForestSmoother, ForestSpec};

fn thread_counts() -> Vec<usize> {
    let max = std::thread::available_parallelism().map_or(2, |v| v.get());
    if max > 1 {
        vec![1, max]
    } else {
        vec![1]
    }
}

fn bench_forest_fit(c: &mut Criterion) {
    let ds = dgp::sample_synthetic(4000, 7);
    let targets = ds.y.clone();
    let mut group = c.benchmark_group("forest_fit_n4000");
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_with_input(
            BenchmarkId::from_parameter(threads),
            &threads,
            |b, &threads| {
                b.iter(|| {
                    exec::with_threads(threads, || {
                        ForestSmoother::fit(ds.x.view(), Some(&targets), &ForestSpec::default(), 3)
                            .unwrap()
                    })
                })
            },
        );
    }
    group.finish();
}

fn bench_blearner_fit(c: &mut Criterion) {
    let ds = dgp::sample_synthetic(2000, 11);
    let s = make_sensitivity(std::f64::consts::E).unwrap();
    let cfg = BLearnerConfig::default();
    let mut group = c.benchmark_group("blearner_fit_n2000");
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_with_input(
            BenchmarkId::from_parameter(threads),
            &threads,
            |b, &threads| {
                b.iter(|| exec::with_threads(threads, || fit_blearner(&ds, &s, &cfg).unwrap()))
            },
        );
    }
    group.finish();
}

fn bench_predict_batch(c: &mut Criterion) {
    let ds = dgp::sample_synthetic(2000, 13);
    let s = make_sensitivity(std::f64::consts::E).unwrap();
    let bounds = exec::with_threads(0, || fit_blearner(&ds, &s, &BLearnerConfig::default()).unwrap());
    let test = dgp::sample_synthetic(400, 99);
    let mut group = c.benchmark_group("predict_batch_400");
    for threads in thread_counts() {
        group.bench_with_input(
            BenchmarkId::from_parameter(threads),
            &threads,
            |b, &threads| {
                b.iter(|| exec::with_threads(threads, || bounds.predict_batch(test.x.view())))
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_forest_fit, bench_blearner_fit, bench_predict_batch);
criterion_main!(benches);
