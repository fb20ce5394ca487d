use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use modelbandit::engine::run_repetitions_sequential;
use modelbandit::{brute_force, generate_synthetic, ExperimentConfig, MetricWeights, Silent, Strategy, SyntheticSpec};

const WEIGHTS: MetricWeights = MetricWeights {
    accuracy: 0.63,
    size: 0.25,
    complexity: 0.21,
};

fn repetitions(c: &mut Criterion) {
    let fx = generate_synthetic(&SyntheticSpec::size_correlated(71, 200, 42)).unwrap();
    let mut group = c.benchmark_group("repetitions");
    group.sample_size(10);
    for strategy in [Strategy::EpsilonGreedy, Strategy::Ucb, Strategy::Thompson] {
        let config = ExperimentConfig {
            strategy,
            budget: 2000,
            epsilon: 0.1,
            seed: 42,
            weights: WEIGHTS,
            repetitions: 16,
        };
        group.bench_with_input(BenchmarkId::new("sequential", strategy.as_str()), &config, |b, cfg| {
            b.iter(|| run_repetitions_sequential(black_box(cfg), &fx.pool, &fx.table, &fx.dataset, &Silent).unwrap())
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", strategy.as_str()), &config, |b, cfg| {
            b.iter(|| {
                modelbandit::engine::run_repetitions_parallel(black_box(cfg), &fx.pool, &fx.table, &fx.dataset, &Silent)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn exhaustive(c: &mut Criterion) {
    let fx = generate_synthetic(&SyntheticSpec::size_correlated(71, 200, 42)).unwrap();
    c.bench_function("brute_force/71x200", |b| {
        b.iter(|| brute_force(&fx.pool, &fx.table, &fx.dataset, black_box(&WEIGHTS)).unwrap())
    });
}

criterion_group!(benches, repetitions, exhaustive);
criterion_main!(benches);
