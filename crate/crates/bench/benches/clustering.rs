use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pnp_bench::mixture_features;
use pnp_core::fastcluster::{estimate_k, infomap, knn_similarity_graph};

fn estimate_k_full_vs_unlabelled(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate_k");
    group.sample_size(10);
    for per_class in [50, 100] {
        let (full, unl) = mixture_features(20, per_class, 16, 0);
        group.bench_with_input(BenchmarkId::new("full", full.len()), &full, |b, f| {
            b.iter(|| estimate_k(black_box(f), 0.6, 10, 0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("unlabelled", unl.len()), &unl, |b, f| {
            b.iter(|| estimate_k(black_box(f), 0.6, 10, 0).unwrap())
        });
    }
    group.finish();
}

fn graph_and_infomap(c: &mut Criterion) {
    let (_, unl) = mixture_features(20, 100, 16, 1);
    c.bench_function("knn_graph", |b| b.iter(|| knn_similarity_graph(black_box(&unl), 0.6, 10).unwrap()));
    let g = knn_similarity_graph(&unl, 0.6, 10).unwrap();
    let mut group = c.benchmark_group("infomap");
    group.sample_size(10);
    group.bench_function("single_seed", |b| b.iter(|| infomap(black_box(&g), 0)));
    group.finish();
}

criterion_group!(benches, estimate_k_full_vs_unlabelled, graph_and_infomap);
criterion_main!(benches);
