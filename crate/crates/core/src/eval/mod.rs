//! Metrics, method comparison, denoising and error heatmaps.

mod compare;
mod denoise;
mod heatmap;
mod methods;
pub mod metrics;

pub use compare::{
    compare_methods, Augmentation, CompareOptions, MetricCell, MetricsRecord, MetricsReport, ReportRow,
};
pub use denoise::{denoise, DenoiseConfig};
pub use heatmap::{error_color, export_error_heatmap, MAX_ERROR_DEG};
pub use methods::Method;
pub use metrics::{angle_between, pgp, rmse_angles};
