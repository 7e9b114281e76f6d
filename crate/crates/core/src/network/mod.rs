//! The GraphFit network: point convolutions, graph blocks with attention
//! fusion and two neighborhood scales, learned transforms and the
//! weight/offset head feeding a weighted jet fit.

mod config;
pub mod fit;
pub mod graph;
pub mod layers;
mod model;
pub mod transform;

pub use config::ModelConfig;
pub use fit::{differentiable_fit, FitOutput};
pub use graph::{
    edge_features, knn_feature_graph, AdaptiveFuse, GraphBlock, GraphConv, MultiScale, NeighborIndex,
};
pub use layers::{BnUpdate, Ctx, Mode};
pub use model::{patch_tensor, ForwardOutput, GraphFitModel, Prediction};
pub use transform::{feature_transform, spatial_transform, PoseNet};
