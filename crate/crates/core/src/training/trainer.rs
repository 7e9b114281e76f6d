use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::Adam;
use super::loss::{total_loss_on_tape, LossInputs, LossWeights};
use super::schedule::{lr_at_epoch, TrainConfig};
use crate::data::{sample_training_patches, AugmentationSpec, ShapeRecord};
use crate::error::{Error, Result};
use crate::geometry::{Patch, PatchExtractor, PointCloud};
use crate::network::{patch_tensor, BnUpdate, Ctx, GraphFitModel, Mode};
use crate::tensor::{Gradients, ParamStore, Tape, Tensor};

/// A canonical patch with ground-truth normals in the same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPatch {
    /// `N x 3`, query first.
    pub points: Tensor,
    /// `N x 3` unit normals.
    pub normals: Tensor,
}

impl TrainingPatch {
    pub fn from_patch(patch: &Patch, cloud: &PointCloud) -> Result<Self> {
        let normals = patch
            .local_normals(cloud)
            .ok_or_else(|| Error::Config("training shapes need ground-truth normals".into()))?;
        Ok(TrainingPatch {
            points: patch_tensor(patch),
            normals: rows(&normals),
        })
    }

    pub fn query_normal(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.normals.data()[..3])
    }
}

fn rows(v: &[Vector3<f64>]) -> Tensor {
    Tensor::matrix(v.len(), 3, v.iter().flat_map(|n| [n.x, n.y, n.z]).collect()).expect("3 columns")
}

/// Where the patches of an epoch come from.
#[derive(Debug, Clone)]
pub enum TrainingData {
    /// The same patches every epoch, shuffled.
    Fixed(Vec<TrainingPatch>),
    /// A fresh sample of `per_shape` queries per shape every epoch.
    Shapes {
        shapes: Vec<ShapeRecord>,
        per_shape: usize,
    },
}

impl TrainingData {
    /// Augments every shape once, then samples from the augmented clouds.
    pub fn from_shapes(shapes: &[ShapeRecord], per_shape: usize, augmentation: AugmentationSpec) -> Result<Self> {
        let shapes = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let spec = AugmentationSpec {
                    seed: augmentation.seed.wrapping_add(i as u64),
                    ..augmentation
                };
                Ok(ShapeRecord {
                    cloud: spec.apply(&s.cloud)?,
                    ..s.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainingData::Shapes { shapes, per_shape })
    }

    fn is_empty(&self) -> bool {
        match self {
            TrainingData::Fixed(p) => p.is_empty(),
            TrainingData::Shapes { shapes, per_shape } => shapes.is_empty() || *per_shape == 0,
        }
    }

    fn epoch_patches(&self, patch_size: usize, seed: u64) -> Result<Vec<TrainingPatch>> {
        match self {
            TrainingData::Fixed(p) => Ok(p.clone()),
            TrainingData::Shapes { shapes, per_shape } => {
                let samples = sample_training_patches(shapes, *per_shape, seed, AugmentationSpec::default())?;
                let extractors: Vec<PatchExtractor> = shapes.iter().map(|s| PatchExtractor::new(&s.cloud)).collect();
                samples
                    .par_iter()
                    .map(|s| {
                        let patch = extractors[s.shape].extract(s.query, patch_size)?;
                        TrainingPatch::from_patch(&patch, &shapes[s.shape].cloud)
                    })
                    .collect()
            }
        }
    }
}

/// Everything besides the parameters needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub adam: Adam,
    pub seed: u64,
}

/// Loss and parameter gradients of one patch in training mode.
pub struct PatchGradient {
    pub loss: f64,
    pub grads: Gradients,
    pub bn_updates: Vec<BnUpdate>,
}

/// Four-term loss of one patch, with gradients.
pub fn patch_gradient(model: &GraphFitModel, patch: &TrainingPatch, weights: &LossWeights) -> Result<PatchGradient> {
    patch_gradient_with(model, &model.params, patch, weights)
}

fn patch_gradient_with(
    model: &GraphFitModel,
    params: &ParamStore,
    patch: &TrainingPatch,
    weights: &LossWeights,
) -> Result<PatchGradient> {
    let mut tape = Tape::new();
    let (total, bn_updates) = {
        let mut ctx = Ctx::new(&mut tape, params, Mode::Train);
        let total = record_patch_loss(model, &mut ctx, patch, weights)?;
        (total, ctx.bn_updates)
    };
    Ok(PatchGradient {
        loss: tape.value(total).item(),
        grads: tape.gradients(total)?,
        bn_updates,
    })
}

/// Records forward pass, jet fit and loss for one patch; returns the loss node.
pub fn record_patch_loss(
    model: &GraphFitModel,
    ctx: &mut Ctx,
    patch: &TrainingPatch,
    weights: &LossWeights,
) -> Result<crate::tensor::Var> {
    let points = ctx.tape.constant(patch.points.clone());
    let (out, fit) = model.forward_fit(ctx, points)?;
    let q = patch.query_normal();
    let inputs = LossInputs {
        query_gt: ctx.tape.constant(Tensor::matrix(1, 3, vec![q.x, q.y, q.z])?),
        query_hat: fit.normal,
        neighbor_gt: ctx.tape.constant(patch.normals.clone()),
        neighbor_hat: fit.neighbor_normals,
        weights: out.weights,
        a1: out.a1,
        a2: out.a2,
    };
    Ok(total_loss_on_tape(ctx.tape, inputs, weights)?.total)
}

/// Mini-batch training with a seeded, reproducible epoch order.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: GraphFitModel,
    pub config: TrainConfig,
    pub weights: LossWeights,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(model: GraphFitModel, config: TrainConfig, weights: LossWeights) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        let state = TrainState {
            epoch: 0,
            adam: Adam::new(&model.params),
            seed: config.seed,
        };
        Ok(Trainer {
            model,
            config,
            weights,
            state,
        })
    }

    /// Continues from a saved model and optimizer state.
    pub fn resume(model: GraphFitModel, state: TrainState, config: TrainConfig, weights: LossWeights) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        if state.adam.m.len() != model.params.len() {
            return Err(Error::Config("optimizer state does not match the model".into()));
        }
        Ok(Trainer {
            model,
            config,
            weights,
            state,
        })
    }

    /// Runs one epoch and returns its mean per-patch loss.
    pub fn train_epoch(&mut self, data: &TrainingData) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Config("training data is empty".into()));
        }
        let epoch = self.state.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(self.state.seed);
        rng.set_stream(epoch as u64);
        let sample_seed = rand::Rng::random::<u64>(&mut rng);
        let mut patches = data.epoch_patches(self.model.config().patch_size, sample_seed)?;
        patches.shuffle(&mut rng);

        let lr = lr_at_epoch(&self.config, epoch);
        let mut loss_sum = 0.0;
        for batch in patches.chunks(self.config.batch_size) {
            let results: Vec<PatchGradient> = batch
                .par_iter()
                .map(|p| patch_gradient_with(&self.model, &self.model.params, p, &self.weights))
                .collect::<Result<_>>()?;
            let mut grads = Gradients::default();
            for r in &results {
                loss_sum += r.loss;
                grads.merge(&r.grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            self.state.adam.update(&mut self.model.params, &grads, lr);
            for r in &results {
                for u in &r.bn_updates {
                    u.apply(&mut self.model.params);
                }
            }
        }
        self.state.epoch += 1;
        Ok(loss_sum / patches.len() as f64)
    }

    /// Trains until `config.epochs` epochs are complete; returns the losses of
    /// the epochs run by this call.
    pub fn run(&mut self, data: &TrainingData) -> Result<Vec<f64>> {
        let mut trace = Vec::new();
        while self.state.epoch < self.config.epochs {
            trace.push(self.train_epoch(data)?);
        }
        Ok(trace)
    }
}

/// Trains `model` for `config.epochs` epochs from scratch.
pub fn train(
    model: GraphFitModel,
    data: &TrainingData,
    config: TrainConfig,
    weights: LossWeights,
) -> Result<(GraphFitModel, Vec<f64>)> {
    let mut trainer = Trainer::new(model, config, weights)?;
    let trace = trainer.run(data)?;
    Ok((trainer.model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_shape, ShapeKind};
    use crate::network::ModelConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            jet_order: 2,
            patch_size: 16,
            point_conv_widths: vec![8],
            graph_block_count: 1,
            graph_block_widths: vec![8],
            k1: 6,
            k2: 3,
            head_widths: vec![8],
            transform_widths: vec![8],
            ..ModelConfig::default()
        }
    }

    fn data() -> TrainingData {
        let shapes = vec![
            synth_shape(ShapeKind::Sphere { radius: 1.0 }, 200, 1).unwrap(),
            synth_shape(ShapeKind::Plane { half_extent: 1.0 }, 200, 2).unwrap(),
        ];
        TrainingData::from_shapes(&shapes, 6, AugmentationSpec::default()).unwrap()
    }

    fn train_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 5,
            epochs,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let model = GraphFitModel::new(tiny_config(), 1).unwrap();
            train(model, &data(), train_config(2), LossWeights::default()).unwrap()
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(ta, tb);
        assert_eq!(ta.len(), 2);
        for ((_, p), (_, q)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(p.value, q.value);
        }
    }

    #[test]
    fn oversized_batch_is_one_batch() {
        let model = GraphFitModel::new(tiny_config(), 1).unwrap();
        let mut config = train_config(1);
        config.batch_size = 1000;
        let mut trainer = Trainer::new(model, config, LossWeights::default()).unwrap();
        trainer.train_epoch(&data()).unwrap();
        assert_eq!(trainer.state.adam.step, 1);
    }

    #[test]
    fn empty_data_is_rejected() {
        let model = GraphFitModel::new(tiny_config(), 1).unwrap();
        let mut trainer = Trainer::new(model, train_config(1), LossWeights::default()).unwrap();
        assert!(matches!(trainer.train_epoch(&TrainingData::Fixed(vec![])), Err(Error::Config(_))));
    }
}
