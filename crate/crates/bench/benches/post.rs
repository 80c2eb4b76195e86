use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use nirm::*;

fn bench_post(c: &mut Criterion) {
    let sim = simulate_responses(&SimulationConfig::default()).unwrap();
    let x = sim.responses;
    let mcmc = McmcConfig { total_iterations: 1_500, burn_in: 500, thinning: 5, progress_interval: 0, ..McmcConfig::default() };
    let draws = fit(&x, &ModelConfig::default(), &mcmc).unwrap();

    let mut group = c.benchmark_group("post");
    group.sample_size(20);
    group.bench_function("procrustes_align/200 draws", |b| b.iter(|| procrustes_align(black_box(&draws), &x).unwrap()));
    let aligned = procrustes_align(&draws, &x).unwrap();
    group.bench_function("summarize/200 draws", |b| b.iter(|| summarize(black_box(&aligned), &draws, &x).unwrap()));
    let summary = summarize(&aligned, &draws, &x).unwrap();
    group.bench_function("similarity_matrix/20 items", |b| {
        b.iter(|| similarity_matrix(black_box(&summary.item_positions), Metric::S1).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_post);
criterion_main!(benches);
