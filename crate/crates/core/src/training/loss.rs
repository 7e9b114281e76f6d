//! The four-term training objective, in plain `f64` and on the tape.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the `-log w` barrier.
    pub lambda1: f64,
    /// Weight of the weighted neighbor angle term.
    pub lambda2: f64,
    /// Spatial-transform regularizer.
    pub lambda3: f64,
    /// Feature-transform regularizer.
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.05,
            lambda2: 0.25,
            lambda3: 0.1,
            lambda4: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `‖n_gt × n̂‖`, i.e. `|sin θ|`.
pub fn angle_loss(n_gt: &Vector3<f64>, n_hat: &Vector3<f64>) -> f64 {
    n_gt.cross(n_hat).norm()
}

/// `(1/N) [-λ1 Σ log w_j + λ2 Σ w_j ‖n_gt,j × n̂_j‖]`.
pub fn consistency_loss(
    weights: &[f64],
    neighbor_gt: &[Vector3<f64>],
    neighbor_hat: &[Vector3<f64>],
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    let n = weights.len();
    if n == 0 || neighbor_gt.len() != n || neighbor_hat.len() != n {
        return Err(Error::Size(format!(
            "{} weights, {} target and {} predicted normals",
            n,
            neighbor_gt.len(),
            neighbor_hat.len()
        )));
    }
    let barrier: f64 = weights.iter().map(|w| w.ln()).sum();
    let residual: f64 = weights
        .iter()
        .zip(neighbor_gt.iter().zip(neighbor_hat))
        .map(|(w, (g, h))| w * angle_loss(g, h))
        .sum();
    Ok((-lambda1 * barrier + lambda2 * residual) / n as f64)
}

/// `‖I - A Aᵀ‖_F`.
pub fn orthogonality_loss(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::shape("orthogonality_loss", &[a.nrows(), a.ncols()], &[a.ncols(), a.nrows()]));
    }
    let n = a.nrows();
    Ok((DMatrix::identity(n, n) - a * a.transpose()).norm())
}

/// Per-patch loss terms recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub angle: Var,
    pub consistency: Var,
    pub reg_spatial: Var,
    pub reg_feature: Var,
    pub total: Var,
}

/// Inputs of [`total_loss_on_tape`]; normals are `N x 3` or `1 x 3` rows.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs {
    pub query_gt: Var,
    pub query_hat: Var,
    pub neighbor_gt: Var,
    pub neighbor_hat: Var,
    pub weights: Var,
    pub a1: Var,
    pub a2: Var,
}

pub fn angle_loss_on_tape(tape: &mut Tape, n_gt: Var, n_hat: Var) -> Result<Var> {
    let c = tape.cross_norm(n_gt, n_hat)?;
    tape.sum(c)
}

pub fn consistency_loss_on_tape(
    tape: &mut Tape,
    weights: Var,
    neighbor_gt: Var,
    neighbor_hat: Var,
    lambda1: f64,
    lambda2: f64,
) -> Result<Var> {
    let n = tape.shape(weights)[0] as f64;
    let log_w = tape.log(weights)?;
    let barrier = tape.sum(log_w)?;
    let residual = tape.cross_norm(neighbor_gt, neighbor_hat)?;
    let weighted = tape.mul(weights, residual)?;
    let weighted = tape.sum(weighted)?;
    let a = tape.scale(barrier, -lambda1 / n)?;
    let b = tape.scale(weighted, lambda2 / n)?;
    tape.add(a, b)
}

pub fn orthogonality_loss_on_tape(tape: &mut Tape, a: Var) -> Result<Var> {
    let shape = tape.shape(a).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape("orthogonality_loss", &shape, &[2]));
    }
    let at = tape.transpose(a)?;
    let aat = tape.matmul(a, at)?;
    let eye = tape.constant(Tensor::eye(shape[0]));
    let diff = tape.sub(eye, aat)?;
    tape.frobenius_norm(diff)
}

/// `angle + L_con + λ3 L_reg(A1) + λ4 L_reg(A2)` for one patch.
pub fn total_loss_on_tape(tape: &mut Tape, inputs: LossInputs, w: &LossWeights) -> Result<LossTerms> {
    let angle = angle_loss_on_tape(tape, inputs.query_gt, inputs.query_hat)?;
    let consistency = consistency_loss_on_tape(
        tape,
        inputs.weights,
        inputs.neighbor_gt,
        inputs.neighbor_hat,
        w.lambda1,
        w.lambda2,
    )?;
    let reg_spatial = orthogonality_loss_on_tape(tape, inputs.a1)?;
    let reg_feature = orthogonality_loss_on_tape(tape, inputs.a2)?;
    let mut total = tape.add(angle, consistency)?;
    let r1 = tape.scale(reg_spatial, w.lambda3)?;
    total = tape.add(total, r1)?;
    let r2 = tape.scale(reg_feature, w.lambda4)?;
    total = tape.add(total, r2)?;
    Ok(LossTerms {
        angle,
        consistency,
        reg_spatial,
        reg_feature,
        total,
    })
}
