//! Building blocks shared by every part of the network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{BatchStats, ParamId, ParamStore, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, recorded for running-average updates.
    Train,
    /// Frozen running statistics.
    Eval,
    /// Statistics of the current input, nothing recorded.
    Inference,
}

/// A pending running-statistics update from one training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats,
}

impl BnUpdate {
    pub fn apply(&self, store: &mut ParamStore) {
        blend(&mut store.get_mut(self.mean).value, &self.stats.mean);
        blend(&mut store.get_mut(self.var).value, &self.stats.var);
    }
}

fn blend(running: &mut Tensor, batch: &[f64]) {
    for (r, b) in running.data_mut().iter_mut().zip(batch) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
    }
}

/// Everything a forward pass needs besides its inputs.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub mode: Mode,
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode) -> Self {
        Ctx {
            tape,
            store,
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }
}

/// Creates parameters with reproducible initial values.
pub struct Initializer<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Initializer<'_> {
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn constant(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.store.add(name, value)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.store.add_buffer(name, value)
    }
}

/// Fully connected layer applied row-wise: `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(init: &mut Initializer, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        Self::with_gain(init, name, inputs, outputs, 1.0)
    }

    /// Uniform `±gain/√inputs` weights and zero bias.
    pub fn with_gain(
        init: &mut Initializer,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
    ) -> Result<Self> {
        let bound = gain / (inputs as f64).sqrt();
        let weight = init.uniform(&format!("{name}.weight"), &[inputs, outputs], bound)?;
        let bias = init.constant(&format!("{name}.bias"), Tensor::zeros(&[outputs]))?;
        Ok(Linear {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let h = ctx.tape.matmul(x, w)?;
        ctx.tape.add(h, b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(init: &mut Initializer, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: init.constant(&format!("{name}.gamma"), Tensor::full(&[channels], 1.0))?,
            beta: init.constant(&format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: init.buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: init.buffer(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0))?,
        })
    }

    /// Normalizes the rows of an `M x C` input.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let normalized = match ctx.mode {
            Mode::Inference => ctx.tape.batch_normalize(x, BN_EPS)?.0,
            Mode::Train => {
                let (y, stats) = ctx.tape.batch_normalize(x, BN_EPS)?;
                ctx.bn_updates.push(BnUpdate {
                    mean: self.running_mean,
                    var: self.running_var,
                    stats,
                });
                y
            }
            Mode::Eval => {
                let mean = ctx.store.value(self.running_mean).clone();
                let inv_std = Tensor::vector(
                    ctx.store
                        .value(self.running_var)
                        .data()
                        .iter()
                        .map(|v| 1.0 / (v + BN_EPS).sqrt())
                        .collect(),
                );
                let mean = ctx.tape.constant(mean);
                let inv_std = ctx.tape.constant(inv_std);
                let centered = ctx.tape.sub(x, mean)?;
                ctx.tape.mul(centered, inv_std)?
            }
        };
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let scaled = ctx.tape.mul(normalized, gamma)?;
        ctx.tape.add(scaled, beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu,
}

/// Shared per-point MLP unit: 1x1 convolution, batch norm, activation.
#[derive(Debug, Clone)]
pub struct MlpUnit {
    pub linear: Linear,
    pub norm: BatchNorm,
    pub activation: Activation,
}

impl MlpUnit {
    pub fn new(
        init: &mut Initializer,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
    ) -> Result<Self> {
        Ok(MlpUnit {
            linear: Linear::new(init, &format!("{name}.conv"), inputs, outputs)?,
            norm: BatchNorm::new(init, &format!("{name}.bn"), outputs)?,
            activation,
        })
    }

    pub fn outputs(&self) -> usize {
        self.linear.outputs
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.linear.forward(ctx, x)?;
        let h = self.norm.forward(ctx, h)?;
        match self.activation {
            Activation::Relu => ctx.tape.relu(h),
            Activation::LeakyRelu => ctx.tape.leaky_relu(h, LEAKY_SLOPE),
        }
    }
}

/// A chain of MLP units.
pub fn mlp_chain(
    init: &mut Initializer,
    name: &str,
    inputs: usize,
    widths: &[usize],
    activation: Activation,
) -> Result<Vec<MlpUnit>> {
    let mut units = Vec::with_capacity(widths.len());
    let mut width = inputs;
    for (i, &w) in widths.iter().enumerate() {
        units.push(MlpUnit::new(init, &format!("{name}.{i}"), width, w, activation)?);
        width = w;
    }
    Ok(units)
}

pub fn forward_chain(units: &[MlpUnit], ctx: &mut Ctx, mut x: Var) -> Result<Var> {
    for unit in units {
        x = unit.forward(ctx, x)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut store = ParamStore::new();
        let mut init = Initializer {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        let bn = BatchNorm::new(&mut init, "bn", 2).unwrap();
        store.get_mut(bn.running_mean).value = Tensor::vector(vec![1.0, -1.0]);
        store.get_mut(bn.running_var).value = Tensor::vector(vec![4.0 - BN_EPS, 1.0 - BN_EPS]);

        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store, Mode::Eval);
        let x = ctx.tape.constant(Tensor::matrix(1, 2, vec![3.0, 0.0]).unwrap());
        let y = bn.forward(&mut ctx, x).unwrap();
        let got = ctx.tape.value(y).data().to_vec();
        assert!((got[0] - 1.0).abs() < 1e-12 && (got[1] - 1.0).abs() < 1e-12);
        assert!(ctx.bn_updates.is_empty());
    }

    #[test]
    fn train_mode_records_and_blends_stats() {
        let mut store = ParamStore::new();
        let mut init = Initializer {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        let bn = BatchNorm::new(&mut init, "bn", 1).unwrap();
        let mut tape = Tape::new();
        let updates = {
            let mut ctx = Ctx::new(&mut tape, &store, Mode::Train);
            let x = ctx.tape.constant(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap());
            let y = bn.forward(&mut ctx, x).unwrap();
            let v = ctx.tape.value(y).data().to_vec();
            assert!((v[0] + v[1]).abs() < 1e-12);
            ctx.bn_updates
        };
        assert_eq!(updates[0].stats.mean, vec![2.0]);
        assert_eq!(updates[0].stats.var, vec![1.0]);
        updates[0].apply(&mut store);
        assert!((store.value(bn.running_mean).item() - 0.2).abs() < 1e-15);
        assert!((store.value(bn.running_var).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inference_mode_matches_train_values_without_updates() {
        let mut store = ParamStore::new();
        let mut init = Initializer {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        let bn = BatchNorm::new(&mut init, "bn", 2).unwrap();
        let input = Tensor::matrix(3, 2, vec![1.0, 0.5, 3.0, -2.0, 2.5, 4.0]).unwrap();
        let run = |mode| {
            let mut tape = Tape::new();
            let mut ctx = Ctx::new(&mut tape, &store, mode);
            let x = ctx.tape.constant(input.clone());
            let y = bn.forward(&mut ctx, x).unwrap();
            (ctx.tape.value(y).clone(), ctx.bn_updates.len())
        };
        let (train, recorded) = run(Mode::Train);
        let (inference, none) = run(Mode::Inference);
        assert_eq!(train, inference);
        assert_eq!((recorded, none), (1, 0));
    }
}
