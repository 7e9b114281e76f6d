use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::methods::Method;
use super::metrics::{pair_angles, pgp_of, rmse_of};
use crate::data::{AugmentationSpec, DensityMode, ShapeRecord, NOISE_HIGH, NOISE_LOW, NOISE_MEDIUM};
use crate::error::{Error, Result};
use crate::geometry::UnitNormal;

/// Benchmark conditions, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    Noiseless,
    NoiseLow,
    NoiseMedium,
    NoiseHigh,
    Gradient,
    Striped,
}

impl Augmentation {
    pub const ALL: [Augmentation; 6] = [
        Augmentation::Noiseless,
        Augmentation::NoiseLow,
        Augmentation::NoiseMedium,
        Augmentation::NoiseHigh,
        Augmentation::Gradient,
        Augmentation::Striped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Augmentation::Noiseless => "noiseless",
            Augmentation::NoiseLow => "noise_low",
            Augmentation::NoiseMedium => "noise_medium",
            Augmentation::NoiseHigh => "noise_high",
            Augmentation::Gradient => "gradient",
            Augmentation::Striped => "striped",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Augmentation::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown augmentation {name:?}")))
    }

    pub fn spec(self, seed: u64) -> AugmentationSpec {
        let (sigma, density) = match self {
            Augmentation::Noiseless => (0.0, DensityMode::None),
            Augmentation::NoiseLow => (NOISE_LOW, DensityMode::None),
            Augmentation::NoiseMedium => (NOISE_MEDIUM, DensityMode::None),
            Augmentation::NoiseHigh => (NOISE_HIGH, DensityMode::None),
            Augmentation::Gradient => (0.0, DensityMode::gradient()),
            Augmentation::Striped => (0.0, DensityMode::striped()),
        };
        AugmentationSpec {
            gaussian_sigma_rel: sigma,
            density_mode: density,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub rmse_deg: f64,
    pub pgp5: f64,
    pub pgp10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub augmentation: String,
    /// One cell per method, in [`MetricsReport::methods`] order.
    pub cells: Vec<MetricCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub methods: Vec<String>,
    pub shape_count: usize,
    pub rows: Vec<ReportRow>,
}

/// One machine-readable result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub augmentation: String,
    pub rmse_deg: f64,
    pub pgp5: f64,
    pub pgp10: f64,
}

impl MetricsReport {
    pub fn records(&self) -> Vec<MetricsRecord> {
        self.rows
            .iter()
            .flat_map(|row| {
                self.methods.iter().zip(&row.cells).map(|(m, c)| MetricsRecord {
                    method: m.clone(),
                    augmentation: row.augmentation.clone(),
                    rmse_deg: c.rmse_deg,
                    pgp5: c.pgp5,
                    pgp10: c.pgp10,
                })
            })
            .collect()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }

    /// Aligned text table of RMSE (degrees) with PGP(5°)/PGP(10°).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<14}", "augmentation");
        for m in &self.methods {
            let _ = write!(out, " | {:>26}", format!("{m} rmse/pgp5/pgp10"));
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<14}", row.augmentation);
            for c in &row.cells {
                let _ = write!(out, " | {:>26}", format!("{:.2} / {:.3} / {:.3}", c.rmse_deg, c.pgp5, c.pgp10));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "({} shapes)", self.shape_count);
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct CompareOptions {
    pub seed: u64,
    /// Evaluate at most this many evenly spaced points per shape.
    pub max_queries: Option<usize>,
}

/// Evaluates every method on every augmented shape. RMSE and PGP are
/// computed per shape and averaged; with more than one augmentation an
/// `average` row closes the table.
pub fn compare_methods(
    shapes: &[ShapeRecord],
    methods: &[Method],
    augmentations: &[Augmentation],
    options: &CompareOptions,
) -> Result<MetricsReport> {
    if shapes.is_empty() || methods.is_empty() || augmentations.is_empty() {
        return Err(Error::Config("need at least one shape, method and augmentation".into()));
    }
    let mut rows = Vec::with_capacity(augmentations.len() + 1);
    for &aug in augmentations {
        let mut sums = vec![[0.0; 3]; methods.len()];
        for (s, shape) in shapes.iter().enumerate() {
            let cloud = aug.spec(options.seed.wrapping_add(s as u64)).apply(&shape.cloud)?;
            let gt = cloud
                .normals()
                .ok_or_else(|| Error::Config(format!("shape {:?} has no ground-truth normals", shape.name)))?;
            let queries = evenly_spaced(cloud.len(), options.max_queries);
            let gt: Vec<_> = queries.iter().map(|&q| gt[q]).collect();
            for (m, method) in methods.iter().enumerate() {
                let pred: Vec<_> = method
                    .estimate(&cloud, &queries)?
                    .into_iter()
                    .map(UnitNormal::into_vector)
                    .collect();
                let angles = pair_angles(&pred, &gt)?;
                sums[m][0] += rmse_of(&angles);
                sums[m][1] += pgp_of(&angles, 5.0);
                sums[m][2] += pgp_of(&angles, 10.0);
            }
        }
        let n = shapes.len() as f64;
        rows.push(ReportRow {
            augmentation: aug.name().into(),
            cells: sums
                .iter()
                .map(|s| MetricCell {
                    rmse_deg: s[0] / n,
                    pgp5: s[1] / n,
                    pgp10: s[2] / n,
                })
                .collect(),
        });
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let cells = (0..methods.len())
            .map(|m| MetricCell {
                rmse_deg: rows.iter().map(|r| r.cells[m].rmse_deg).sum::<f64>() / n,
                pgp5: rows.iter().map(|r| r.cells[m].pgp5).sum::<f64>() / n,
                pgp10: rows.iter().map(|r| r.cells[m].pgp10).sum::<f64>() / n,
            })
            .collect();
        rows.push(ReportRow {
            augmentation: "average".into(),
            cells,
        });
    }
    Ok(MetricsReport {
        methods: methods.iter().map(Method::name).collect(),
        shape_count: shapes.len(),
        rows,
    })
}

fn evenly_spaced(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
        _ => (0..n).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_shape, ShapeKind};
    use crate::geometry::JetOrder;

    fn sphere() -> ShapeRecord {
        synth_shape(ShapeKind::Sphere { radius: 1.0 }, 2000, 3).unwrap()
    }

    #[test]
    fn jet_beats_pca_on_noiseless_sphere() {
        let methods = [
            Method::Pca { k: 40 },
            Method::Jet {
                k: 40,
                order: JetOrder::new(2).unwrap(),
            },
        ];
        let report = compare_methods(&[sphere()], &methods, &[Augmentation::Noiseless], &CompareOptions::default())
            .unwrap();
        assert_eq!(report.rows.len(), 1);
        let cells = &report.rows[0].cells;
        assert!(cells[1].rmse_deg < cells[0].rmse_deg, "{:?}", cells);
    }

    #[test]
    fn rows_follow_table_order() {
        let options = CompareOptions {
            seed: 1,
            max_queries: Some(50),
        };
        let report = compare_methods(&[sphere()], &[Method::Pca { k: 20 }], &Augmentation::ALL, &options).unwrap();
        let names: Vec<_> = report.rows.iter().map(|r| r.augmentation.as_str()).collect();
        assert_eq!(
            names,
            ["noiseless", "noise_low", "noise_medium", "noise_high", "gradient", "striped", "average"]
        );
        for row in &report.rows {
            let c = row.cells[0];
            assert!(c.rmse_deg >= 0.0 && c.pgp5 <= c.pgp10 && c.pgp10 <= 1.0);
        }
        let again = compare_methods(&[sphere()], &[Method::Pca { k: 20 }], &Augmentation::ALL, &options).unwrap();
        assert_eq!(report, again);

        let jsonl = report.to_jsonl();
        let lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(lines.len(), 7);
        let rec: MetricsRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(rec.method, "pca");
        assert_eq!(rec.augmentation, "noiseless");
        assert!(report.to_table().contains("striped"));
    }
}
