use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseConfig {
    pub gamma: f64,
    pub iterations: usize,
    /// Neighbors per point, the point itself excluded.
    pub k: usize,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            gamma: 0.05,
            iterations: 10,
            k: 8,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.iterations == 0 || self.k == 0 {
            return Err(Error::Config("iterations and k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Moves every point along its own and its neighbors' normal directions:
/// `p_i += γ Σ_j (n_i n_iᵀ + n_j n_jᵀ)(p_j - p_i)`. Neighborhoods are
/// rebuilt before each iteration; normals stay attached to their points.
pub fn denoise(cloud: &PointCloud, config: &DenoiseConfig) -> Result<PointCloud> {
    config.validate()?;
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::Config("denoising needs a normal per point".into()))?
        .to_vec();
    if config.k >= cloud.len() {
        return Err(Error::Size(format!(
            "need more than {} points for {} neighbors",
            cloud.len(),
            config.k
        )));
    }
    let projectors: Vec<Matrix3<f64>> = normals.iter().map(|n| n * n.transpose()).collect();
    let mut points = cloud.points().to_vec();
    for _ in 0..config.iterations {
        let tree = KdTree::new(&points);
        points = (0..points.len())
            .into_par_iter()
            .map(|i| {
                let p = points[i];
                let step: Vector3<f64> = tree
                    .nearest(&p, config.k + 1)
                    .into_iter()
                    .filter(|&(j, _)| j != i)
                    .take(config.k)
                    .map(|(j, _)| (projectors[i] + projectors[j]) * (points[j] - p))
                    .sum();
                p + config.gamma * step
            })
            .collect();
    }
    PointCloud::new(points, Some(normals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{add_gaussian_noise, synth_shape, ShapeKind};

    fn plane() -> PointCloud {
        synth_shape(ShapeKind::Plane { half_extent: 1.0 }, 1500, 4).unwrap().cloud
    }

    #[test]
    fn clean_plane_stays_in_plane() {
        let c = plane();
        let out = denoise(&c, &DenoiseConfig::default()).unwrap();
        assert!(out.points().iter().all(|p| p.z.abs() < 1e-15));
        for (a, b) in out.points().iter().zip(c.points()) {
            assert!((a.xy() - b.xy()).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_gamma_is_identity() {
        let c = add_gaussian_noise(&plane(), 0.01, 1).unwrap();
        let config = DenoiseConfig {
            gamma: 0.0,
            ..DenoiseConfig::default()
        };
        assert_eq!(denoise(&c, &config).unwrap(), c);
    }

    #[test]
    fn noisy_plane_is_flattened() {
        let c = add_gaussian_noise(&plane(), 0.01, 2).unwrap();
        let before: f64 = c.points().iter().map(|p| p.z.abs()).sum::<f64>() / c.len() as f64;
        let out = denoise(&c, &DenoiseConfig::default()).unwrap();
        let after: f64 = out.points().iter().map(|p| p.z.abs()).sum::<f64>() / c.len() as f64;
        assert!(after <= 0.5 * before, "{before} -> {after}");
    }

    #[test]
    fn step_is_bounded() {
        let c = add_gaussian_noise(&synth_shape(ShapeKind::Sphere { radius: 1.0 }, 800, 5).unwrap().cloud, 0.01, 3)
            .unwrap();
        let config = DenoiseConfig {
            iterations: 1,
            ..DenoiseConfig::default()
        };
        let out = denoise(&c, &config).unwrap();
        let tree = KdTree::new(c.points());
        for (i, (a, b)) in out.points().iter().zip(c.points()).enumerate() {
            let bound: f64 = tree
                .nearest(b, config.k + 1)
                .into_iter()
                .filter(|&(j, _)| j != i)
                .take(config.k)
                .map(|(j, _)| (c.points()[j] - b).norm())
                .sum::<f64>()
                * config.gamma
                * 2.0;
            assert!((a - b).norm() <= bound + 1e-15);
        }
    }

    #[test]
    fn requires_normals() {
        let c = plane().with_normals(None).unwrap();
        assert!(denoise(&c, &DenoiseConfig::default()).is_err());
    }
}
