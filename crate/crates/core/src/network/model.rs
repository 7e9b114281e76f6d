use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ModelConfig;
use super::fit::{differentiable_fit, FitOutput};
use super::graph::GraphBlock;
use super::layers::{forward_chain, mlp_chain, Activation, Ctx, Initializer, Linear, Mode, MlpUnit};
use super::transform::{feature_transform, spatial_transform, PoseNet};
use crate::error::{Error, Result};
use crate::geometry::{
    canonical_jet_normal, solve_weighted_jet, OffsetVector, Patch, PatchExtractor, PointCloud, UnitNormal,
    WeightVector, MAX_OFFSET, WEIGHT_FLOOR,
};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Gain of the last head layer. Keeps an untrained model close to uniform
/// weights and zero offsets, i.e. close to a classical jet fit.
const HEAD_OUTPUT_GAIN: f64 = 0.01;

/// Tape handles produced by one forward pass over a patch.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `N` point weights in `[ε, 1]`.
    pub weights: Var,
    /// `N x 3` offsets in `[-0.25, 0.25]`.
    pub offsets: Var,
    /// Spatial transform `3 x 3`.
    pub a1: Var,
    /// Feature transform `C x C`.
    pub a2: Var,
    /// Patch points multiplied by `A1`.
    pub transformed: Var,
}

/// Plain-value network output for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub weights: WeightVector,
    pub offsets: OffsetVector,
    /// Row-vector convention: transformed point = `p A1`.
    pub a1: Matrix3<f64>,
    pub transformed: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone)]
struct Layers {
    spatial: PoseNet,
    point_convs: Vec<MlpUnit>,
    feature: PoseNet,
    blocks: Vec<GraphBlock>,
    head: Vec<MlpUnit>,
    head_out: Linear,
}

/// The full network with its parameters.
#[derive(Debug, Clone)]
pub struct GraphFitModel {
    config: ModelConfig,
    pub params: ParamStore,
    layers: Layers,
}

impl GraphFitModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Initializer {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let c = &config;
        let spatial = PoseNet::new(&mut init, "stn", 3, &c.transform_widths)?;
        let point_convs = mlp_chain(&mut init, "point", 3, &c.point_conv_widths, Activation::LeakyRelu)?;
        let feature = PoseNet::new(&mut init, "ftn", c.feature_width(), &c.transform_widths)?;
        let mut blocks = Vec::with_capacity(c.graph_block_count);
        let mut width = c.feature_width();
        for b in 0..c.graph_block_count {
            let block = GraphBlock::new(
                &mut init,
                &format!("block{b}"),
                width,
                c.block_width(b),
                c.k1,
                c.k2,
                c.use_adaptive_module,
                c.use_multi_scale,
                c.attention_reduction,
            )?;
            width = block.outputs();
            blocks.push(block);
        }
        let skip_width: usize = blocks.iter().map(GraphBlock::outputs).sum();
        let head = mlp_chain(&mut init, "head", skip_width, &c.head_widths, Activation::LeakyRelu)?;
        let last = *c.head_widths.last().expect("validated widths");
        let head_out = Linear::with_gain(&mut init, "head.out", last, 4, HEAD_OUTPUT_GAIN)?;
        Ok(GraphFitModel {
            config,
            params,
            layers: Layers {
                spatial,
                point_convs,
                feature,
                blocks,
                head,
                head_out,
            },
        })
    }

    /// Builds the model and takes parameter values from `params` (names and
    /// shapes must match).
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = GraphFitModel::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for (_, p) in model.params.iter_mut() {
            let src = params
                .by_name(&p.name)
                .ok_or_else(|| Error::Config(format!("missing parameter {:?}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {:?} has shape {:?}, expected {:?}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Records the network on `ctx.tape` for canonical patch points (`N x 3`).
    pub fn forward(&self, ctx: &mut Ctx, points: Var) -> Result<ForwardOutput> {
        let shape = ctx.tape.shape(points).to_vec();
        if shape != [self.config.patch_size, 3] {
            return Err(Error::shape("forward", &shape, &[self.config.patch_size, 3]));
        }
        let l = &self.layers;
        let (transformed, a1) = spatial_transform(&l.spatial, ctx, points)?;
        let h = forward_chain(&l.point_convs, ctx, transformed)?;
        let (mut h, a2) = feature_transform(&l.feature, ctx, h)?;
        let mut outputs = Vec::with_capacity(l.blocks.len());
        for block in &l.blocks {
            h = block.forward(ctx, h)?;
            outputs.push(h);
        }
        let skip = if outputs.len() == 1 {
            outputs[0]
        } else {
            ctx.tape.concat(&outputs, 1)?
        };
        let h = forward_chain(&l.head, ctx, skip)?;
        let raw = l.head_out.forward(ctx, h)?;

        let w = ctx.tape.select_last(raw, &[0])?;
        let w = ctx.tape.reshape(w, &[shape[0]])?;
        let w = ctx.tape.sigmoid(w)?;
        let weights = ctx.tape.clamp_min(w, WEIGHT_FLOOR)?;
        let o = ctx.tape.select_last(raw, &[1, 2, 3])?;
        let o = ctx.tape.tanh(o)?;
        let offsets = ctx.tape.scale(o, MAX_OFFSET)?;
        Ok(ForwardOutput {
            weights,
            offsets,
            a1,
            a2,
            transformed,
        })
    }

    /// Forward pass followed by the differentiable jet fit.
    pub fn forward_fit(&self, ctx: &mut Ctx, points: Var) -> Result<(ForwardOutput, FitOutput)> {
        let out = self.forward(ctx, points)?;
        let fit = differentiable_fit(
            ctx,
            out.transformed,
            out.offsets,
            out.weights,
            out.a1,
            self.config.order(),
        )?;
        Ok((out, fit))
    }

    /// Batch-norm mode used by [`Self::predict`].
    pub fn inference_mode(&self) -> Mode {
        if self.config.running_stats_at_inference {
            Mode::Eval
        } else {
            Mode::Inference
        }
    }

    /// Inference-mode weights, offsets and spatial transform for a patch.
    pub fn predict(&self, patch: &Patch) -> Result<Prediction> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, self.inference_mode());
        let points = ctx.tape.constant(patch_tensor(patch));
        let out = self.forward(&mut ctx, points)?;
        let t = ctx.tape;
        let a = t.value(out.a1).data();
        Ok(Prediction {
            weights: WeightVector::new(t.value(out.weights).data().to_vec())?,
            offsets: OffsetVector::new(rows3(t.value(out.offsets)))?,
            a1: Matrix3::from_row_slice(a),
            transformed: rows3(t.value(out.transformed)),
        })
    }

    /// Network-weighted jet normal of the patch query, in world coordinates.
    pub fn estimate_normal(&self, patch: &Patch) -> Result<UnitNormal> {
        let pred = self.predict(patch)?;
        let fitted = Patch::from_local_points(pred.transformed.clone());
        let fit = solve_weighted_jet(&fitted, self.config.order(), &pred.weights, &pred.offsets)?;
        // Row vectors: n_canonical = n_transformed A1ᵀ, i.e. A1 n as a column.
        let n = pred.a1 * canonical_jet_normal(&fit.coefficients);
        if n.norm() == 0.0 {
            return Err(Error::Degenerate("spatial transform collapsed the normal".into()));
        }
        UnitNormal::new(patch.frame.direction_to_world(&n.normalize()))
    }

    /// Normals for every point of a cloud, computed in parallel.
    pub fn estimate_cloud_normals(&self, cloud: &PointCloud) -> Result<Vec<UnitNormal>> {
        let extractor = PatchExtractor::new(cloud);
        (0..cloud.len())
            .into_par_iter()
            .map(|i| self.estimate_normal(&extractor.extract(i, self.config.patch_size)?))
            .collect()
    }
}

/// `N x 3` tensor of the patch's canonical points.
pub fn patch_tensor(patch: &Patch) -> Tensor {
    let data = patch.local_points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    Tensor::matrix(patch.len(), 3, data).expect("three coordinates per point")
}

fn rows3(t: &Tensor) -> Vec<Vector3<f64>> {
    t.data().chunks_exact(3).map(Vector3::from_column_slice).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classical_jet_normal, JetOrder};
    use rand::{Rng, SeedableRng};

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            jet_order: 2,
            patch_size: 32,
            point_conv_widths: vec![16, 16],
            graph_block_count: 2,
            graph_block_widths: vec![24],
            k1: 8,
            k2: 4,
            head_widths: vec![32, 16],
            transform_widths: vec![16, 32],
            ..ModelConfig::default()
        }
    }

    fn random_patch(n: usize, seed: u64, curvature: f64) -> Patch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = vec![Vector3::zeros()];
        while pts.len() < n {
            let (x, y): (f64, f64) = (rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7));
            pts.push(Vector3::new(x, y, curvature * (x * x + 0.5 * y * y)));
        }
        Patch::from_local_points(pts)
    }

    #[test]
    fn output_shapes_and_ranges() {
        let model = GraphFitModel::new(toy_config(), 1).unwrap();
        let pred = model.predict(&random_patch(32, 2, 0.3)).unwrap();
        assert_eq!(pred.weights.len(), 32);
        assert_eq!(pred.offsets.len(), 32);
        assert!(pred.weights.as_slice().iter().all(|&w| (WEIGHT_FLOOR..=1.0).contains(&w)));
        assert!(pred.offsets.as_slice().iter().all(|o| o.amax() <= MAX_OFFSET));
        assert_eq!(pred.a1, Matrix3::identity());
    }

    #[test]
    fn wrong_patch_size_is_rejected() {
        let model = GraphFitModel::new(toy_config(), 1).unwrap();
        assert!(model.predict(&random_patch(31, 2, 0.3)).is_err());
    }

    #[test]
    fn forward_is_equivariant_to_neighbor_permutation() {
        let model = GraphFitModel::new(toy_config(), 3).unwrap();
        let patch = random_patch(32, 4, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut perm: Vec<usize> = (0..32).collect();
        for i in (2..32).rev() {
            perm.swap(i, rng.random_range(1..=i));
        }
        let permuted = Patch::from_local_points(perm.iter().map(|&i| patch.local_points[i]).collect());
        let a = model.predict(&patch).unwrap();
        let b = model.predict(&permuted).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            assert!((a.weights.as_slice()[src] - b.weights.as_slice()[slot]).abs() < 1e-10);
            assert!((a.offsets.as_slice()[src] - b.offsets.as_slice()[slot]).norm() < 1e-10);
        }
    }

    #[test]
    fn untrained_model_reproduces_plane_normal() {
        let model = GraphFitModel::new(toy_config(), 7).unwrap();
        let patch = random_patch(32, 8, 0.0);
        let n = model.estimate_normal(&patch).unwrap();
        let classical = classical_jet_normal(&patch, JetOrder::new(2).unwrap()).unwrap();
        let angle = n.as_vector().dot(classical.as_vector()).abs().min(1.0).acos().to_degrees();
        assert!(angle < 2.0, "{angle}");
        assert!((n.as_vector().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn with_params_copies_values() {
        let a = GraphFitModel::new(toy_config(), 1).unwrap();
        let b = GraphFitModel::with_params(toy_config(), a.params.clone()).unwrap();
        for ((_, p), (_, q)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(p.value, q.value);
        }
        let mut other = toy_config();
        other.head_widths = vec![8];
        assert!(GraphFitModel::with_params(other, a.params.clone()).is_err());
    }
}
