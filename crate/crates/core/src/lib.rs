//! Normal estimation for unstructured point clouds by weighted n-jet fitting.
//!
//! A graph-convolutional network predicts a weight and an offset for every
//! point of a local patch; those feed a closed-form weighted least-squares
//! fit of a bivariate polynomial height function, whose gradient at the
//! query gives the normal. The crate also carries the classical PCA and
//! unweighted jet baselines, a small reverse-mode autodiff engine used for
//! training, PCPNet-style data handling, metrics and a normal-guided
//! denoiser.
//!
//! Module map:
//!
//! - [`geometry`]: patches, canonical frames, PCA and jet fitting.
//! - [`tensor`]: dense tensors, the gradient tape and gradient checking.
//! - [`network`]: graph blocks, attention fusion, multi-scale layer, model.
//! - [`training`]: losses, Adam, learning-rate schedule, checkpoints.
//! - [`data`]: file formats, augmentation, synthetic shapes, sampling.
//! - [`eval`]: RMSE/PGP metrics, method comparison, denoising, heatmaps.

pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linalg;
pub mod network;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{
    JetCoefficients, JetFit, JetOrder, LocalFrame, OffsetVector, Patch, PointCloud, UnitNormal,
    WeightVector,
};
pub use network::{GraphFitModel, ModelConfig};
pub use tensor::{ParamStore, Tape, Tensor, Var};
pub use training::{LossWeights, TrainConfig};
