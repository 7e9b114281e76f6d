use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::JetOrder;

/// Architecture of a GraphFit model. Every width is configurable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub jet_order: usize,
    /// Points per patch, query included.
    pub patch_size: usize,
    pub point_conv_widths: Vec<usize>,
    pub graph_block_count: usize,
    /// One width per graph block, or a single width shared by all blocks.
    pub graph_block_widths: Vec<usize>,
    /// Neighbors of the large scale.
    pub k1: usize,
    /// Neighbors of the small scale.
    pub k2: usize,
    pub use_multi_scale: bool,
    pub use_adaptive_module: bool,
    pub head_widths: Vec<usize>,
    /// Point-MLP widths of the pose networks producing the transforms.
    pub transform_widths: Vec<usize>,
    /// Channel reduction inside the attention gate.
    pub attention_reduction: usize,
    /// Normalize with the running averages at inference instead of the
    /// statistics of the patch being evaluated.
    pub running_stats_at_inference: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            jet_order: 3,
            patch_size: 256,
            point_conv_widths: vec![64, 64],
            graph_block_count: 2,
            graph_block_widths: vec![128],
            k1: 20,
            k2: 10,
            use_multi_scale: true,
            use_adaptive_module: true,
            head_widths: vec![256, 128],
            transform_widths: vec![64, 128],
            attention_reduction: 4,
            running_stats_at_inference: false,
        }
    }
}

impl ModelConfig {
    pub fn order(&self) -> JetOrder {
        JetOrder::new(self.jet_order).expect("validated jet order")
    }

    pub fn block_width(&self, block: usize) -> usize {
        if self.graph_block_widths.len() == 1 {
            self.graph_block_widths[0]
        } else {
            self.graph_block_widths[block]
        }
    }

    /// Width of the features entering the graph blocks.
    pub fn feature_width(&self) -> usize {
        *self.point_conv_widths.last().expect("validated widths")
    }

    pub fn validate(&self) -> Result<()> {
        let order = JetOrder::new(self.jet_order)?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.point_conv_widths.is_empty()
            || self.graph_block_widths.is_empty()
            || self.head_widths.is_empty()
            || self.transform_widths.is_empty()
        {
            return fail("channel width lists must be non-empty".into());
        }
        let all_widths = self
            .point_conv_widths
            .iter()
            .chain(&self.graph_block_widths)
            .chain(&self.head_widths)
            .chain(&self.transform_widths);
        if all_widths.clone().any(|&w| w == 0) {
            return fail("channel widths must be positive".into());
        }
        if !(1..=3).contains(&self.graph_block_count) {
            return fail(format!(
                "graph_block_count must be 1, 2 or 3, got {}",
                self.graph_block_count
            ));
        }
        if self.graph_block_widths.len() != 1
            && self.graph_block_widths.len() != self.graph_block_count
        {
            return fail(format!(
                "{} graph block widths for {} blocks",
                self.graph_block_widths.len(),
                self.graph_block_count
            ));
        }
        if self.k2 == 0 || self.k2 >= self.k1 || self.k1 >= self.patch_size {
            return fail(format!(
                "need 0 < k2 < k1 < patch_size, got k2 = {}, k1 = {}, patch_size = {}",
                self.k2, self.k1, self.patch_size
            ));
        }
        if self.patch_size < order.term_count() {
            return fail(format!(
                "patch_size {} is smaller than the {} jet terms",
                self.patch_size,
                order.term_count()
            ));
        }
        if self.attention_reduction == 0 {
            return fail("attention_reduction must be positive".into());
        }
        Ok(())
    }

    /// `key=value` pairs in a stable order, used by checkpoint headers.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| {
            v.iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        vec![
            ("jet_order".into(), self.jet_order.to_string()),
            ("patch_size".into(), self.patch_size.to_string()),
            ("point_conv_widths".into(), list(&self.point_conv_widths)),
            ("graph_block_count".into(), self.graph_block_count.to_string()),
            ("graph_block_widths".into(), list(&self.graph_block_widths)),
            ("k1".into(), self.k1.to_string()),
            ("k2".into(), self.k2.to_string()),
            ("use_multi_scale".into(), self.use_multi_scale.to_string()),
            ("use_adaptive_module".into(), self.use_adaptive_module.to_string()),
            ("head_widths".into(), list(&self.head_widths)),
            ("transform_widths".into(), list(&self.transform_widths)),
            ("attention_reduction".into(), self.attention_reduction.to_string()),
            ("running_stats_at_inference".into(), self.running_stats_at_inference.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let get = |key: &str| {
            pairs
                .get(key)
                .ok_or_else(|| Error::Config(format!("missing model key {key:?}")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Config(format!("bad integer for {key:?}")))
        };
        let flag = |key: &str| -> Result<bool> {
            get(key)?
                .parse()
                .map_err(|_| Error::Config(format!("bad boolean for {key:?}")))
        };
        let list = |key: &str| -> Result<Vec<usize>> {
            get(key)?
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad width list for {key:?}")))
                })
                .collect()
        };
        let config = ModelConfig {
            jet_order: num("jet_order")?,
            patch_size: num("patch_size")?,
            point_conv_widths: list("point_conv_widths")?,
            graph_block_count: num("graph_block_count")?,
            graph_block_widths: list("graph_block_widths")?,
            k1: num("k1")?,
            k2: num("k2")?,
            use_multi_scale: flag("use_multi_scale")?,
            use_adaptive_module: flag("use_adaptive_module")?,
            head_widths: list("head_widths")?,
            transform_widths: list("transform_widths")?,
            attention_reduction: num("attention_reduction")?,
            running_stats_at_inference: flag("running_stats_at_inference")?,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        let map: BTreeMap<_, _> = c.to_pairs().into_iter().collect();
        assert_eq!(ModelConfig::from_pairs(&map).unwrap(), c);
    }

    #[test]
    fn rejects_bad_scales_and_block_counts() {
        let mut c = ModelConfig::default();
        c.k2 = 20;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.graph_block_count = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.patch_size = 20;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.head_widths.clear();
        assert!(c.validate().is_err());
    }
}
