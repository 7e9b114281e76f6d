use nalgebra::Vector3;

use super::{Patch, UnitNormal};
use crate::error::{Error, Result};
use crate::linalg::{covariance, sorted_eigen3};

/// Classical PCA normal: the smallest-eigenvalue eigenvector of the patch
/// covariance, oriented to +z in the canonical frame, returned in world frame.
pub fn pca_normal(patch: &Patch) -> Result<UnitNormal> {
    if patch.len() < 3 {
        return Err(Error::Degenerate(format!(
            "PCA needs at least 3 points, patch has {}",
            patch.len()
        )));
    }
    let (values, vectors) = sorted_eigen3(&covariance(&patch.local_points));
    // Collinear (or coincident) points leave two vanishing eigenvalues.
    if values[1] <= 1e-12 * values[2].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "patch covariance is rank deficient (collinear points)".into(),
        ));
    }
    let mut n: Vector3<f64> = vectors[0];
    if n.z < 0.0 {
        n = -n;
    }
    UnitNormal::new(patch.frame.direction_to_world(&n))
}
