//! Shared inputs for the benchmarks.

use graphfit_core::data::{synth_shape, ShapeKind, ShapeRecord};
use graphfit_core::network::ModelConfig;

/// A unit sphere of `count` points with exact normals.
pub fn sphere(count: usize) -> ShapeRecord {
    synth_shape(ShapeKind::Sphere { radius: 1.0 }, count, 1).expect("valid sphere")
}

/// The default architecture at a reduced patch size.
pub fn bench_model_config(patch_size: usize) -> ModelConfig {
    ModelConfig {
        patch_size,
        ..ModelConfig::default()
    }
}
