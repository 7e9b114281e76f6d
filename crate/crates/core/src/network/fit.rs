//! Weighted jet fitting recorded on the tape, so the angle and consistency
//! losses can be differentiated back into the weights, offsets and `A1`.

use crate::error::{Error, Result};
use crate::geometry::JetOrder;
use crate::linalg::cholesky;
use crate::tensor::{Tensor, Var};

use super::layers::Ctx;

/// Normals produced by a differentiable jet fit, in the canonical patch frame.
#[derive(Debug, Clone, Copy)]
pub struct FitOutput {
    /// Jet coefficients in the transformed frame (`N_n`).
    pub beta: Var,
    /// Query normal (`1 x 3`).
    pub normal: Var,
    /// Normal of the fitted surface at every shifted point (`N x 3`).
    pub neighbor_normals: Var,
    pub regularized: bool,
}

/// Solves `(Mᵀ W M) β = Mᵀ W z` on `transformed + offsets`, then maps the
/// query and neighbor normals back through `A1ᵀ`.
pub fn differentiable_fit(
    ctx: &mut Ctx,
    transformed: Var,
    offsets: Var,
    weights: Var,
    a1: Var,
    order: JetOrder,
) -> Result<FitOutput> {
    let shifted = ctx.tape.add(transformed, offsets)?;
    let n = ctx.tape.shape(shifted)[0];
    let nn = order.term_count();
    if n < nn {
        return Err(Error::Size(format!(
            "order {} jet needs at least {nn} points, patch has {n}",
            order.degree()
        )));
    }
    let xy = ctx.tape.select_last(shifted, &[0, 1])?;
    let z = ctx.tape.select_last(shifted, &[2])?;

    let m = ctx.tape.monomials(xy, order, 0, 0)?;
    let mt = ctx.tape.transpose(m)?;
    let mtw = ctx.tape.mul(mt, weights)?;
    let normal = ctx.tape.matmul(mtw, m)?;
    let normal_t = ctx.tape.transpose(normal)?;
    let normal = ctx.tape.add(normal, normal_t)?;
    let mut normal = ctx.tape.scale(normal, 0.5)?;
    let rhs = ctx.tape.matmul(mtw, z)?;
    let rhs = ctx.tape.reshape(rhs, &[nn])?;

    let values = ctx.tape.value(normal).data();
    let regularized = cholesky(values, nn).is_none();
    if regularized {
        let trace: f64 = (0..nn).map(|i| values[i * nn + i]).sum();
        let mut ridge = Tensor::eye(nn);
        ridge.data_mut().iter_mut().for_each(|v| *v *= 1e-9 * trace / nn as f64);
        let ridge = ctx.tape.constant(ridge);
        normal = ctx.tape.add(normal, ridge)?;
    }
    let beta = ctx.tape.solve_spd(normal, rhs)?;
    let beta_col = ctx.tape.reshape(beta, &[nn, 1])?;
    let a1t = ctx.tape.transpose(a1)?;
    let ones = ctx.tape.constant(Tensor::full(&[1, 1], 1.0));

    let slopes = ctx.tape.select_last(beta, &[1, 2])?;
    let slopes = ctx.tape.reshape(slopes, &[1, 2])?;
    let slopes = ctx.tape.neg(slopes)?;
    let query = ctx.tape.concat(&[slopes, ones], 1)?;
    let query = canonical(ctx, query, a1t)?;

    let mx = ctx.tape.monomials(xy, order, 1, 0)?;
    let my = ctx.tape.monomials(xy, order, 0, 1)?;
    let gx = ctx.tape.matmul(mx, beta_col)?;
    let gy = ctx.tape.matmul(my, beta_col)?;
    let grad = ctx.tape.concat(&[gx, gy], 1)?;
    let grad = ctx.tape.neg(grad)?;
    let ones_n = ctx.tape.constant(Tensor::full(&[n, 1], 1.0));
    let neighbors = ctx.tape.concat(&[grad, ones_n], 1)?;
    let neighbors = canonical(ctx, neighbors, a1t)?;

    Ok(FitOutput {
        beta,
        normal: query,
        neighbor_normals: neighbors,
        regularized,
    })
}

/// Normalizes rows, un-rotates them by `A1ᵀ`, and normalizes again.
fn canonical(ctx: &mut Ctx, rows: Var, a1t: Var) -> Result<Var> {
    let unit = ctx.tape.normalize_rows(rows)?;
    let back = ctx.tape.matmul(unit, a1t)?;
    ctx.tape.normalize_rows(back)
}
