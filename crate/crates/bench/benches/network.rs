use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use graphfit_bench::{bench_model_config, sphere};
use graphfit_core::geometry::PatchExtractor;
use graphfit_core::training::{patch_gradient, TrainingPatch};
use graphfit_core::{GraphFitModel, LossWeights};

fn forward(c: &mut Criterion) {
    let shape = sphere(20_000);
    let extractor = PatchExtractor::new(&shape.cloud);
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for patch_size in [64, 256] {
        let model = GraphFitModel::new(bench_model_config(patch_size), 0).unwrap();
        let patch = extractor.extract(0, patch_size).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(patch_size), &patch, |b, patch| {
            b.iter(|| model.estimate_normal(black_box(patch)).unwrap())
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let shape = sphere(20_000);
    let model = GraphFitModel::new(bench_model_config(64), 0).unwrap();
    let patch = PatchExtractor::new(&shape.cloud).extract(0, 64).unwrap();
    let sample = TrainingPatch::from_patch(&patch, &shape.cloud).unwrap();
    let weights = LossWeights::default();
    let mut group = c.benchmark_group("patch_gradient");
    group.sample_size(10);
    group.bench_function("64", |b| b.iter(|| patch_gradient(&model, black_box(&sample), &weights).unwrap()));
    group.finish();
}

criterion_group!(benches, forward, backward);
criterion_main!(benches);
