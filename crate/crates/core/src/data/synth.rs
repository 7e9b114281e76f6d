//! Analytic shapes with exact normals.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud};

/// A named point cloud with optional split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRecord {
    pub name: String,
    pub cloud: PointCloud,
    pub splits: Vec<String>,
}

impl ShapeRecord {
    pub fn new(name: impl Into<String>, cloud: PointCloud) -> Self {
        ShapeRecord {
            name: name.into(),
            cloud,
            splits: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapeKind {
    /// `z = 0` over `[-half_extent, half_extent]²`.
    Plane { half_extent: f64 },
    Sphere { radius: f64 },
    /// `z = a x² + b y²` over `[-half_extent, half_extent]²`.
    Quadric { a: f64, b: f64, half_extent: f64 },
    /// Axis-aligned cube surface centered at the origin.
    Cube { side: f64 },
}

impl ShapeKind {
    /// Unit-sized defaults for `plane`, `sphere`, `quadric` and `cube`.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "plane" => ShapeKind::Plane { half_extent: 1.0 },
            "sphere" => ShapeKind::Sphere { radius: 1.0 },
            "quadric" => ShapeKind::Quadric {
                a: 0.5,
                b: -0.3,
                half_extent: 1.0,
            },
            "cube" => ShapeKind::Cube { side: 2.0 },
            other => {
                return Err(Error::Config(format!(
                    "unknown shape {other:?} (expected plane, sphere, quadric or cube)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Plane { .. } => "plane",
            ShapeKind::Sphere { .. } => "sphere",
            ShapeKind::Quadric { .. } => "quadric",
            ShapeKind::Cube { .. } => "cube",
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidValue(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            ShapeKind::Plane { half_extent } => positive("half_extent", half_extent),
            ShapeKind::Sphere { radius } => positive("radius", radius),
            ShapeKind::Quadric { a, b, half_extent } => {
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidValue("quadric coefficients must be finite".into()));
                }
                positive("half_extent", half_extent)
            }
            ShapeKind::Cube { side } => positive("side", side),
        }
    }
}

/// `count` area-uniform surface samples of `kind` with analytic unit normals.
pub fn synth_shape(kind: ShapeKind, count: usize, seed: u64) -> Result<ShapeRecord> {
    if count == 0 {
        return Err(Error::Size("cannot sample zero points".into()));
    }
    kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    match kind {
        ShapeKind::Plane { half_extent: h } => {
            for _ in 0..count {
                points.push(Vector3::new(rng.random_range(-h..=h), rng.random_range(-h..=h), 0.0));
                normals.push(Vector3::z());
            }
        }
        ShapeKind::Sphere { radius } => {
            while points.len() < count {
                let v = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                let len: f64 = v.norm();
                if len < 1e-12 {
                    continue;
                }
                let n = v / len;
                points.push(n * radius);
                normals.push(n);
            }
        }
        ShapeKind::Quadric { a, b, half_extent: h } => {
            // Rejection on the area element keeps samples uniform on the surface.
            let max_area = (1.0 + 4.0 * h * h * (a * a + b * b)).sqrt();
            while points.len() < count {
                let (x, y) = (rng.random_range(-h..=h), rng.random_range(-h..=h));
                let g = Vector3::new(-2.0 * a * x, -2.0 * b * y, 1.0);
                if rng.random::<f64>() * max_area > g.norm() {
                    continue;
                }
                points.push(Vector3::new(x, y, a * x * x + b * y * y));
                normals.push(g.normalize());
            }
        }
        ShapeKind::Cube { side } => {
            let h = side / 2.0;
            for _ in 0..count {
                let face = rng.random_range(0..6usize);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = Vector3::new(rng.random_range(-h..=h), rng.random_range(-h..=h), rng.random_range(-h..=h));
                p[axis] = sign * h;
                let mut n = Vector3::zeros();
                n[axis] = sign;
                points.push(p);
                normals.push(n);
            }
        }
    }
    let cloud = PointCloud::new(points, Some(normals))?;
    Ok(ShapeRecord::new(kind.name(), cloud))
}

/// Appends `round(fraction * n)` points drawn uniformly from the bounding box
/// inflated by `0.1 * diagonal`. Each outlier takes the ground-truth normal of
/// its nearest surface sample.
pub fn add_outliers(record: &ShapeRecord, fraction: f64, seed: u64) -> Result<ShapeRecord> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidValue(format!("outlier fraction {fraction} outside [0, 1]")));
    }
    let cloud = &record.cloud;
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::Config("outliers need ground-truth normals".into()))?;
    let count = (fraction * cloud.len() as f64).round() as usize;
    let (lo, hi) = cloud.bbox();
    let pad = Vector3::repeat(0.1 * cloud.bbox_diagonal());
    let (lo, hi) = (lo - pad, hi + pad);
    let tree = KdTree::new(cloud.points());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = cloud.points().to_vec();
    let mut out_normals = normals.to_vec();
    for _ in 0..count {
        let p = Vector3::from_fn(|i, _| rng.random_range(lo[i]..=hi[i]));
        let nearest = tree.nearest(&p, 1)[0].0;
        points.push(p);
        out_normals.push(normals[nearest]);
    }
    Ok(ShapeRecord {
        name: record.name.clone(),
        cloud: PointCloud::new(points, Some(out_normals))?,
        splits: record.splits.clone(),
    })
}
