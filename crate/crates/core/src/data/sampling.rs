use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::AugmentationSpec;
use super::synth::ShapeRecord;
use crate::error::{Error, Result};

/// One training query: which shape, which point, and how the shape was augmented.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSample {
    pub shape: usize,
    pub query: usize,
    pub augmentation: AugmentationSpec,
}

/// `per_shape` query indices drawn uniformly from every shape, shape by shape.
/// Indices are distinct unless `per_shape` exceeds a shape's size, in which
/// case they are drawn with replacement.
pub fn sample_training_patches(
    shapes: &[ShapeRecord],
    per_shape: usize,
    seed: u64,
    augmentation: AugmentationSpec,
) -> Result<Vec<PatchSample>> {
    if per_shape == 0 {
        return Err(Error::Config("per_shape must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(shapes.len() * per_shape);
    for (s, shape) in shapes.iter().enumerate() {
        let n = shape.cloud.len();
        let queries: Vec<usize> = if per_shape <= n {
            index::sample(&mut rng, n, per_shape).into_vec()
        } else {
            (0..per_shape).map(|_| rng.random_range(0..n)).collect()
        };
        out.extend(queries.into_iter().map(|query| PatchSample {
            shape: s,
            query,
            augmentation,
        }));
    }
    Ok(out)
}
