use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use linkfed_bench::{random_dataset, random_scores};
use linkfed_core::bounds::build_drift_chain;
use linkfed_core::losses::{boost_linear, solve_taylor, LossKind, SourceLoss, TaylorLossSpec};
use linkfed_core::matching::{greedy_match, hungarian_match, CandidatePairSet};
use linkfed_core::permdiag::factorize;
use linkfed_core::RowBlocks;

fn matching(c: &mut Criterion) {
    let mut group = c.benchmark_group("matching");
    for m in [16, 64, 256] {
        let set = CandidatePairSet::complete(&random_scores(m, 1)).unwrap();
        group.bench_with_input(BenchmarkId::new("greedy", m), &set, |b, s| b.iter(|| greedy_match(black_box(s))));
        if m <= 64 {
            group.bench_with_input(BenchmarkId::new("hungarian", m), &set, |b, s| {
                b.iter(|| hungarian_match(black_box(s), 64).unwrap())
            });
        }
    }
    group.finish();
}

fn learners(c: &mut Criterion) {
    let ds = random_dataset(10, 700, 2);
    let spec = TaylorLossSpec::from_loss(&SourceLoss::registry(LossKind::Logistic), 1.0, 10).unwrap();
    c.bench_function("solve_taylor d=10 m=700", |b| b.iter(|| solve_taylor(black_box(&ds), &spec).unwrap()));
    c.bench_function("boost 200 rounds d=10 m=700", |b| b.iter(|| boost_linear(black_box(&ds), 200).unwrap()));
}

fn drift_chain(c: &mut Criterion) {
    let ds = random_dataset(10, 40, 3);
    let spec = TaylorLossSpec::from_loss(&SourceLoss::registry(LossKind::Square), 50.0, 10).unwrap();
    let blocks = RowBlocks::new((0..5).collect(), (5..10).collect(), 10).unwrap();
    let mut pi: Vec<usize> = (0..40).collect();
    for k in 0..10 {
        pi.swap(k, 39 - k);
    }
    let seq = factorize(&pi, ds.labels()).unwrap();
    c.bench_function("drift chain T=10 d=10", |b| {
        b.iter(|| build_drift_chain(black_box(&ds), &blocks, &seq, &spec).unwrap())
    });
}

criterion_group!(benches, matching, learners, drift_chain);
criterion_main!(benches);
