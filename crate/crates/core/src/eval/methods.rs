use std::sync::Arc;

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{classical_jet_normal, pca_normal, JetOrder, PatchExtractor, PointCloud, UnitNormal};
use crate::network::GraphFitModel;

/// A normal estimator.
#[derive(Debug, Clone)]
pub enum Method {
    /// Smallest principal axis of the `k`-neighborhood.
    Pca { k: usize },
    /// Unweighted jet fit over the `k`-neighborhood.
    Jet { k: usize, order: JetOrder },
    /// Trained network; the neighborhood size is the model's patch size.
    Model(Arc<GraphFitModel>),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Pca { .. } => "pca".into(),
            Method::Jet { order, .. } => format!("jet{}", order.degree()),
            Method::Model(_) => "graphfit".into(),
        }
    }

    /// Estimated normals at `queries`, computed in parallel.
    pub fn estimate(&self, cloud: &PointCloud, queries: &[usize]) -> Result<Vec<UnitNormal>> {
        let extractor = PatchExtractor::new(cloud);
        queries
            .par_iter()
            .map(|&q| match self {
                Method::Pca { k } => pca_normal(&extractor.extract(q, *k)?),
                Method::Jet { k, order } => classical_jet_normal(&extractor.extract(q, *k)?, *order),
                Method::Model(m) => m.estimate_normal(&extractor.extract(q, m.config().patch_size)?),
            })
            .collect()
    }

    pub fn estimate_all(&self, cloud: &PointCloud) -> Result<Vec<UnitNormal>> {
        let all: Vec<usize> = (0..cloud.len()).collect();
        self.estimate(cloud, &all)
    }
}
