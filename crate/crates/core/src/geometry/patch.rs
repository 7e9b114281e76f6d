use nalgebra::{Matrix3, Vector3};

use super::{KdTree, LocalFrame, Patch, PointCloud};
use crate::error::{Error, Result};
use crate::linalg::{covariance, sorted_eigen3};

/// Extracts the `k`-nearest-neighbor patch around `query` and canonicalizes it.
///
/// Builds a throwaway spatial index; use [`PatchExtractor`] for many queries
/// on the same cloud.
pub fn extract_patch(cloud: &PointCloud, query: usize, k: usize) -> Result<Patch> {
    PatchExtractor::new(cloud).extract(query, k)
}

/// Patch extraction over one cloud with a shared kd-tree.
#[derive(Debug, Clone)]
pub struct PatchExtractor<'a> {
    cloud: &'a PointCloud,
    tree: KdTree,
}

impl<'a> PatchExtractor<'a> {
    pub fn new(cloud: &'a PointCloud) -> Self {
        PatchExtractor {
            cloud,
            tree: KdTree::new(cloud.points()),
        }
    }

    pub fn cloud(&self) -> &PointCloud {
        self.cloud
    }

    /// The `k` nearest neighbors of the query, query first, then by
    /// distance and ascending index.
    pub fn neighbors(&self, query: usize, k: usize) -> Result<Vec<usize>> {
        let n = self.cloud.len();
        if query >= n {
            return Err(Error::Bounds { index: query, len: n });
        }
        if k == 0 || k > n {
            return Err(Error::Size(format!(
                "need 1 <= k <= {n} neighbors, got k = {k}"
            )));
        }
        let q = self.cloud.points()[query];
        let mut indices: Vec<usize> = self.tree.nearest(&q, k).into_iter().map(|(i, _)| i).collect();
        match indices.iter().position(|&i| i == query) {
            Some(pos) => {
                indices.remove(pos);
            }
            // More than k points coincide with the query and all precede it.
            None => {
                indices.pop();
            }
        }
        indices.insert(0, query);
        Ok(indices)
    }

    pub fn extract(&self, query: usize, k: usize) -> Result<Patch> {
        let source_indices = self.neighbors(query, k)?;
        let points = self.cloud.points();
        let raw: Vec<Vector3<f64>> = source_indices.iter().map(|&i| points[i]).collect();
        let origin = points[query];

        let scale = raw.iter().map(|p| (p - origin).norm()).fold(0.0, f64::max);
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::Degenerate(format!(
                "patch around point {query} has all {k} points coincident"
            )));
        }

        let rotation = pca_rotation(&raw);
        let frame = LocalFrame {
            rotation,
            translation: origin,
            scale,
        };
        let local_points = raw.iter().map(|p| frame.to_local(p)).collect();
        Ok(Patch {
            query_index: query,
            local_points,
            frame,
            source_indices,
        })
    }
}

/// Proper rotation whose rows are the principal axes of `points`, largest
/// variance first, so the smallest-variance axis becomes local z.
fn pca_rotation(points: &[Vector3<f64>]) -> Matrix3<f64> {
    let (_, vecs) = sorted_eigen3(&covariance(points));
    let z = vecs[0].normalize();
    let x = vecs[2].normalize();
    let y = z.cross(&x).normalize();
    let x = y.cross(&z);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}
