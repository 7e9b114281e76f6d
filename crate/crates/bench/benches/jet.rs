use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use graphfit_bench::sphere;
use graphfit_core::geometry::{
    classical_jet_normal, pca_normal, solve_weighted_jet, JetOrder, OffsetVector, PatchExtractor, WeightVector,
};

fn jet_solve(c: &mut Criterion) {
    let shape = sphere(20_000);
    let patch = PatchExtractor::new(&shape.cloud).extract(0, 256).unwrap();
    let weights = WeightVector::new((0..patch.len()).map(|i| 0.5 + 0.5 * (i as f64).sin().abs()).collect()).unwrap();
    let offsets = OffsetVector::zeros(patch.len());
    let mut group = c.benchmark_group("weighted_jet_256");
    for order in 1..=4 {
        let order = JetOrder::new(order).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(order.degree()), &order, |b, &order| {
            b.iter(|| solve_weighted_jet(black_box(&patch), order, &weights, &offsets).unwrap())
        });
    }
    group.finish();
}

fn baselines(c: &mut Criterion) {
    let shape = sphere(20_000);
    let patch = PatchExtractor::new(&shape.cloud).extract(0, 256).unwrap();
    let order = JetOrder::new(3).unwrap();
    c.bench_function("pca_normal_256", |b| b.iter(|| pca_normal(black_box(&patch)).unwrap()));
    c.bench_function("classical_jet3_256", |b| {
        b.iter(|| classical_jet_normal(black_box(&patch), order).unwrap())
    });
}

criterion_group!(benches, jet_solve, baselines);
criterion_main!(benches);
