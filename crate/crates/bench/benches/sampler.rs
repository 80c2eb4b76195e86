use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nirm::datasets::lsat6_subsample;
use nirm::*;

fn start(x: &ResponseMatrix, model: &ModelConfig) -> ParameterState {
    let mcmc = McmcConfig { total_iterations: 200, burn_in: 100, thinning: 100, progress_interval: 0, ..McmcConfig::default() };
    fit(x, model, &mcmc).unwrap().states.pop().unwrap()
}

fn bench_log_posterior(c: &mut Criterion) {
    let mut group = c.benchmark_group("log_posterior");
    for (label, n, p) in [("50x10", 50, 10), ("200x20", 200, 20)] {
        let sim = simulate_responses(&SimulationConfig { n_persons: n, n_items: p, ..SimulationConfig::default() }).unwrap();
        let model = ModelConfig::default();
        let state = start(&sim.responses, &model);
        group.bench_function(label, |b| b.iter(|| log_posterior(black_box(&sim.responses), &state, &model).unwrap()));
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(20);
    let lsat = lsat6_subsample(300, 1).unwrap();
    let sim = simulate_responses(&SimulationConfig::default()).unwrap().responses;
    for (label, x, encoding) in [
        ("lsat6-300", &lsat, Encoding::PositiveConcordant),
        ("sim-200x20", &sim, Encoding::PositiveConcordant),
        ("sim-200x20-concord", &sim, Encoding::AllConcordant),
    ] {
        let model = ModelConfig { encoding, ..ModelConfig::default() };
        let state = start(x, &model);
        let scales = ProposalScales::default();
        group.bench_function(label, |b| {
            b.iter_batched(
                || ChaCha8Rng::seed_from_u64(1),
                |mut rng| sweep(&state, x, &model, &scales, &mut rng).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_log_posterior, bench_sweep);
criterion_main!(benches);
