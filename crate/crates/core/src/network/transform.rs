//! Pose networks that predict the spatial (3x3) and feature (CxC) transforms.

use super::layers::{forward_chain, mlp_chain, Activation, Ctx, Initializer, Linear, MlpUnit};
use crate::error::Result;
use crate::tensor::{Tensor, Var};

/// Point MLP, max-pool over points, two fully connected layers emitting a
/// `d x d` matrix. The last layer starts at zero weights with an identity
/// bias, so an untrained network returns exactly `I`.
#[derive(Debug, Clone)]
pub struct PoseNet {
    pub points: Vec<MlpUnit>,
    pub hidden: Linear,
    pub out: Linear,
    pub dim: usize,
}

impl PoseNet {
    pub fn new(init: &mut Initializer, name: &str, dim: usize, widths: &[usize]) -> Result<Self> {
        let points = mlp_chain(init, &format!("{name}.mlp"), dim, widths, Activation::Relu)?;
        let last = *widths.last().expect("validated widths");
        let hidden_width = (last / 2).max(1);
        let hidden = Linear::new(init, &format!("{name}.fc"), last, hidden_width)?;
        let weight = init.constant(
            &format!("{name}.out.weight"),
            Tensor::zeros(&[hidden_width, dim * dim]),
        )?;
        let bias = init.constant(&format!("{name}.out.bias"), Tensor::eye(dim).reshape(&[dim * dim])?)?;
        Ok(PoseNet {
            points,
            hidden,
            out: Linear {
                weight,
                bias,
                inputs: hidden_width,
                outputs: dim * dim,
            },
            dim,
        })
    }

    /// Returns `(x A, A)`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<(Var, Var)> {
        let h = forward_chain(&self.points, ctx, x)?;
        let pooled = ctx.tape.reduce_max(h, 0)?;
        let width = ctx.tape.shape(pooled)[0];
        let pooled = ctx.tape.reshape(pooled, &[1, width])?;
        let h = self.hidden.forward(ctx, pooled)?;
        let h = ctx.tape.relu(h)?;
        let a = self.out.forward(ctx, h)?;
        let a = ctx.tape.reshape(a, &[self.dim, self.dim])?;
        let transformed = ctx.tape.matmul(x, a)?;
        Ok((transformed, a))
    }
}

/// Spatial transformer over canonical patch points (`N x 3`).
pub fn spatial_transform(net: &PoseNet, ctx: &mut Ctx, points: Var) -> Result<(Var, Var)> {
    net.forward(ctx, points)
}

/// Feature transformer over point features (`N x C`).
pub fn feature_transform(net: &PoseNet, ctx: &mut Ctx, features: Var) -> Result<(Var, Var)> {
    net.forward(ctx, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::layers::Mode;
    use crate::tensor::{ParamStore, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(n, c, (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn untrained_transforms_are_identity() {
        for (dim, widths) in [(3, vec![8, 16]), (6, vec![12])] {
            let mut store = ParamStore::new();
            let mut init = Initializer {
                store: &mut store,
                rng: ChaCha8Rng::seed_from_u64(1),
            };
            let net = PoseNet::new(&mut init, "t", dim, &widths).unwrap();
            let x = random(10, dim, 2);
            for mode in [Mode::Train, Mode::Eval] {
                let mut tape = Tape::new();
                let mut ctx = Ctx::new(&mut tape, &store, mode);
                let xv = ctx.tape.constant(x.clone());
                let (y, a) = net.forward(&mut ctx, xv).unwrap();
                assert_eq!(ctx.tape.value(a), &Tensor::eye(dim));
                assert_eq!(ctx.tape.value(y), &x);
            }
        }
    }

    #[test]
    fn output_layer_receives_gradient_at_identity() {
        let mut store = ParamStore::new();
        let mut init = Initializer {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(3),
        };
        let net = PoseNet::new(&mut init, "t", 3, &[8]).unwrap();
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store, Mode::Train);
        let xv = ctx.tape.constant(random(12, 3, 4));
        let (y, _) = net.forward(&mut ctx, xv).unwrap();
        let loss = ctx.tape.sum(y).unwrap();
        let grads = tape.gradients(loss).unwrap();
        assert!(grads.get(net.out.bias).unwrap().max_abs() > 0.0);
    }
}
