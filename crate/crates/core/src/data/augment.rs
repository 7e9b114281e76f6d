//! Noise and density augmentations. Ground-truth normals are carried along
//! untouched; survivors of the density filters keep their order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// The three benchmark noise tiers, relative to the bounding-box diagonal.
pub const NOISE_LOW: f64 = 0.00125;
pub const NOISE_MEDIUM: f64 = 0.006;
pub const NOISE_HIGH: f64 = 0.012;

pub const GRADIENT_NEAR_KEEP: f64 = 1.0;
pub const GRADIENT_FAR_KEEP: f64 = 0.1;
pub const STRIPE_BANDS: usize = 8;
pub const STRIPE_KEEP: f64 = 0.15;

/// Named noise tiers in the order the benchmark tables list them.
pub fn noise_presets() -> [(&'static str, f64); 3] {
    [("low", NOISE_LOW), ("medium", NOISE_MEDIUM), ("high", NOISE_HIGH)]
}

/// Adds i.i.d. Gaussian noise of std `sigma_rel * bbox_diagonal` per coordinate.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma_rel: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma_rel >= 0.0 && sigma_rel.is_finite()) {
        return Err(Error::InvalidValue(format!("noise level must be >= 0, got {sigma_rel}")));
    }
    if sigma_rel == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma_rel * cloud.bbox_diagonal()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points()
        .iter()
        .map(|p| p.map(|c| c + normal.sample(&mut rng)))
        .collect();
    PointCloud::new(points, cloud.normals().map(<[_]>::to_vec))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DensityMode {
    None,
    /// Keep probability falls linearly from `near` to `far` along the longest
    /// bounding-box axis.
    Gradient { near: f64, far: f64 },
    /// The longest axis is cut into `bands` equal slabs; every other slab
    /// (the odd ones) keeps points with probability `keep`.
    Striped { bands: usize, keep: f64 },
}

impl DensityMode {
    pub fn gradient() -> Self {
        DensityMode::Gradient {
            near: GRADIENT_NEAR_KEEP,
            far: GRADIENT_FAR_KEEP,
        }
    }

    pub fn striped() -> Self {
        DensityMode::Striped {
            bands: STRIPE_BANDS,
            keep: STRIPE_KEEP,
        }
    }
}

/// Noise level and density filter applied to a shape before patches are cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub gaussian_sigma_rel: f64,
    pub density_mode: DensityMode,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            gaussian_sigma_rel: 0.0,
            density_mode: DensityMode::None,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let noisy = add_gaussian_noise(cloud, self.gaussian_sigma_rel, self.seed)?;
        let density_seed = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        let (thinned, _) = apply_density(&noisy, self.density_mode, density_seed)?;
        Ok(thinned)
    }
}

pub fn density_gradient(cloud: &PointCloud, seed: u64) -> Result<PointCloud> {
    Ok(apply_density(cloud, DensityMode::gradient(), seed)?.0)
}

pub fn density_striped(cloud: &PointCloud, seed: u64) -> Result<PointCloud> {
    Ok(apply_density(cloud, DensityMode::striped(), seed)?.0)
}

/// Thinned cloud together with the kept source indices, in ascending order.
pub fn apply_density(cloud: &PointCloud, mode: DensityMode, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    let keep_probability: Box<dyn Fn(f64) -> f64> = match mode {
        DensityMode::None => return Ok((cloud.clone(), (0..cloud.len()).collect())),
        DensityMode::Gradient { near, far } => {
            check_probability(near)?;
            check_probability(far)?;
            Box::new(move |t| near + (far - near) * t)
        }
        DensityMode::Striped { bands, keep } => {
            check_probability(keep)?;
            if bands == 0 {
                return Err(Error::InvalidValue("stripe band count must be positive".into()));
            }
            Box::new(move |t| {
                let band = ((t * bands as f64) as usize).min(bands - 1);
                if band % 2 == 1 {
                    keep
                } else {
                    1.0
                }
            })
        }
    };
    let (lo, hi) = cloud.bbox();
    let extent = hi - lo;
    let axis = extent.imax();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept: Vec<usize> = cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let t = if extent[axis] > 0.0 {
                (p[axis] - lo[axis]) / extent[axis]
            } else {
                0.0
            };
            rng.random::<f64>() < keep_probability(t)
        })
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        return Err(Error::Degenerate("density filter removed every point".into()));
    }
    Ok((cloud.select(&kept)?, kept))
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("keep probability {p} outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn line_cloud(n: usize) -> PointCloud {
        let pts = (0..n).map(|i| Vector3::new(i as f64 / (n - 1) as f64, 0.0, 0.0)).collect();
        let normals = vec![Vector3::z(); n];
        PointCloud::new(pts, Some(normals)).unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
        PointCloud::new(pts, None).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let c = random_cloud(50, 1);
        assert_eq!(add_gaussian_noise(&c, 0.0, 9).unwrap(), c);
    }

    #[test]
    fn noise_std_matches_request() {
        let c = random_cloud(100_000, 2);
        let sigma = NOISE_HIGH * c.bbox_diagonal();
        let noisy = add_gaussian_noise(&c, NOISE_HIGH, 3).unwrap();
        for axis in 0..3 {
            let d: Vec<f64> = noisy.points().iter().zip(c.points()).map(|(a, b)| a[axis] - b[axis]).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
            assert!((std / sigma - 1.0).abs() < 0.02, "axis {axis}: {std} vs {sigma}");
        }
    }

    #[test]
    fn noise_keeps_normals() {
        let c = line_cloud(20);
        let noisy = add_gaussian_noise(&c, NOISE_MEDIUM, 1).unwrap();
        assert_eq!(noisy.normals(), c.normals());
        assert!(add_gaussian_noise(&c, -1.0, 1).is_err());
    }

    #[test]
    fn gradient_ramp_ratio() {
        let c = line_cloud(200_000);
        let (_, kept) = apply_density(&c, DensityMode::gradient(), 5).unwrap();
        let n = c.len();
        let near = kept.iter().filter(|&&i| i < n / 20).count() as f64;
        let far = kept.iter().filter(|&&i| i >= n - n / 20).count() as f64;
        // Expected keep rates over the end twentieths: 0.9775 vs 0.1225.
        let expect = 0.9775 / 0.1225;
        assert!((near / far / expect - 1.0).abs() < 0.05, "{}", near / far);
    }

    #[test]
    fn stripes_follow_band_boundaries() {
        let c = line_cloud(80_001);
        let (thin, kept) = apply_density(&c, DensityMode::striped(), 6).unwrap();
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
        let n = c.len();
        for band in 0..8 {
            let lo = band * (n - 1) / 8;
            let hi = (band + 1) * (n - 1) / 8;
            let count = kept.iter().filter(|&&i| i > lo && i < hi).count() as f64;
            let rate = count / (hi - lo - 1) as f64;
            let expect = if band % 2 == 1 { STRIPE_KEEP } else { 1.0 };
            assert!((rate - expect).abs() < 0.02, "band {band}: {rate}");
        }
        assert_eq!(thin.normals().unwrap().len(), kept.len());
    }

    #[test]
    fn density_is_deterministic() {
        let c = random_cloud(1000, 7);
        assert_eq!(density_striped(&c, 1).unwrap(), density_striped(&c, 1).unwrap());
        assert_eq!(density_gradient(&c, 1).unwrap(), density_gradient(&c, 1).unwrap());
        assert_ne!(density_gradient(&c, 1).unwrap(), density_gradient(&c, 2).unwrap());
    }
}
