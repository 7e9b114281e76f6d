//! Patches, canonical frames and the classical fitting machinery.

mod jet;
mod patch;
mod pca;
pub mod spatial;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub use jet::{
    build_vandermonde, canonical_jet_normal, classical_jet_normal, jet_normal, monomial_exponents,
    monomial_rows, neighbor_normals, solve_weighted_jet, vandermonde_partials, JetCoefficients,
    JetFit, JetOrder, OffsetVector, WeightVector, MAX_OFFSET, WEIGHT_FLOOR,
};
pub use patch::{extract_patch, PatchExtractor};
pub use pca::pca_normal;
pub use spatial::KdTree;

/// A point set with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
    bbox_diagonal: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, normals: Option<Vec<Vector3<f64>>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Size("point cloud is empty".into()));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidValue("non-finite point coordinate".into()));
        }
        if let Some(normals) = &normals {
            if normals.len() != points.len() {
                return Err(Error::Size(format!(
                    "{} normals for {} points",
                    normals.len(),
                    points.len()
                )));
            }
            if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::InvalidValue(format!(
                    "normal {i} is not unit length (norm {})",
                    normals[i].norm()
                )));
            }
        }
        let bbox_diagonal = bbox_diagonal(&points);
        if bbox_diagonal <= 0.0 {
            return Err(Error::Degenerate(
                "all points coincide; bounding box is empty".into(),
            ));
        }
        Ok(PointCloud {
            points,
            normals,
            bbox_diagonal,
        })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox_diagonal
    }

    /// Replaces the normals, keeping positions.
    pub fn with_normals(self, normals: Option<Vec<Vector3<f64>>>) -> Result<Self> {
        PointCloud::new(self.points, normals)
    }

    /// Keeps the listed points in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|n| indices.iter().map(|&i| n[i]).collect());
        PointCloud::new(points, normals)
    }

    pub fn bbox(&self) -> (Vector3<f64>, Vector3<f64>) {
        bbox(&self.points)
    }
}

pub(crate) fn bbox(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    points.iter().fold(
        (
            Vector3::repeat(f64::INFINITY),
            Vector3::repeat(f64::NEG_INFINITY),
        ),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    let (lo, hi) = bbox(points);
    (hi - lo).norm()
}

/// Direction of unit length. Sign carries no meaning for unoriented work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitNormal(Vector3<f64>);

impl UnitNormal {
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Degenerate(format!("cannot normalize {v:?}")));
        }
        Ok(UnitNormal(v / norm))
    }

    pub fn z() -> Self {
        UnitNormal(Vector3::z())
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_vector(self) -> Vector3<f64> {
        self.0
    }

    pub fn flipped(self) -> Self {
        UnitNormal(-self.0)
    }
}

/// Rigid-plus-scale map from world coordinates into a patch's canonical frame:
/// `local = rotation * (world - translation) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl LocalFrame {
    pub fn identity() -> Self {
        LocalFrame {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.translation) / self.scale
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * p * self.scale + self.translation
    }

    pub fn direction_to_local(&self, n: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * n
    }

    pub fn direction_to_world(&self, n: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * n
    }
}

/// A query point and its neighbors expressed in a canonical local frame.
///
/// Row 0 is always the query itself, sitting at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub query_index: usize,
    pub local_points: Vec<Vector3<f64>>,
    pub frame: LocalFrame,
    pub source_indices: Vec<usize>,
}

impl Patch {
    /// Wraps points that already live in a canonical frame (identity frame).
    pub fn from_local_points(local_points: Vec<Vector3<f64>>) -> Self {
        let n = local_points.len();
        Patch {
            query_index: 0,
            local_points,
            frame: LocalFrame::identity(),
            source_indices: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.local_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_points.is_empty()
    }

    /// Ground-truth normals of the patch points mapped into the canonical frame.
    pub fn local_normals(&self, cloud: &PointCloud) -> Option<Vec<Vector3<f64>>> {
        let normals = cloud.normals()?;
        Some(
            self.source_indices
                .iter()
                .map(|&i| self.frame.direction_to_local(&normals[i]))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_rejects_bad_normals_and_computes_diagonal() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 2.0, 2.0)];
        let cloud = PointCloud::new(pts.clone(), None).unwrap();
        assert!((cloud.bbox_diagonal() - 3.0).abs() < 1e-15);
        let bad = vec![Vector3::new(0.0, 0.0, 2.0); 2];
        assert!(matches!(
            PointCloud::new(pts.clone(), Some(bad)),
            Err(Error::InvalidValue(_))
        ));
        assert!(matches!(
            PointCloud::new(pts, Some(vec![Vector3::z()])),
            Err(Error::Size(_))
        ));
        assert!(PointCloud::new(vec![Vector3::zeros(); 3], None).is_err());
    }

    #[test]
    fn frame_round_trip() {
        let rotation = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        let frame = LocalFrame {
            rotation,
            translation: Vector3::new(1.0, -2.0, 0.5),
            scale: 0.25,
        };
        let p = Vector3::new(0.3, 0.7, -1.2);
        assert!((frame.to_world(&frame.to_local(&p)) - p).norm() < 1e-12);
        let n = Vector3::new(0.0, 0.6, 0.8);
        assert!((frame.direction_to_world(&frame.direction_to_local(&n)) - n).norm() < 1e-12);
    }
}
