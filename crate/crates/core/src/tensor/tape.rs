//! Gradient tape: every forward operation appends a node holding its value
//! and whatever it needs for the backward pass. Nodes only reference earlier
//! nodes, so walking the tape backwards is a reverse topological order.

use super::dense::{gemm, split_axis};
use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{monomial_rows, JetOrder};
use crate::linalg::{cholesky, cholesky_solve};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    GatherRows { input: Var, index: Vec<usize> },
    ReduceMax { input: Var, argmax: Vec<usize> },
    ReduceMean { input: Var, axis: usize },
    SumAll(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Log(Var),
    ClampMin(Var, f64),
    Map { input: Var, derivative: Vec<f64> },
    Transpose(Var),
    Reshape(Var),
    SelectLast { input: Var, cols: Vec<usize> },
    BatchNormalize { input: Var, inv_std: Vec<f64> },
    SolveSpd { a: Var, b: Var, factor: Vec<f64> },
    Monomials { xy: Var, order: JetOrder, dx: u32, dy: u32 },
    NormalizeRows { input: Var, norms: Vec<f64> },
    CrossNorm(Var, Var),
    FrobeniusNorm(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Per-channel statistics observed by a training-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::InvalidValue(format!(
                "{name} produced a non-finite value"
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// `a (m x k) · b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.broadcast_check(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b).data();
        let inner = vb.len().max(1);
        let data: Vec<f64> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, vb[i % inner]))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(value, op, name)
    }

    /// Elementwise `a + b`; `b` may be a suffix shape broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())?;
        self.push(value, op, name)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    /// `c - x`.
    pub fn rsub_scalar(&mut self, c: f64, x: Var) -> Result<Var> {
        let n = self.neg(x)?;
        self.add_scalar(n, c)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(
            "leaky_relu",
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    /// `max(x, lo)`; gradient flows only where `x > lo`.
    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Result<Var> {
        self.unary("clamp_min", x, |v| v.max(lo), Op::ClampMin(x, lo))
    }

    /// Elementwise `f` with a user-supplied derivative `df`.
    pub fn map(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> Result<Var> {
        let derivative = self.value(x).data().iter().map(|&v| df(v)).collect();
        self.unary("map", x, f, Op::Map { input: x, derivative })
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::Size("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let d = self.shape(v)[axis];
                let src = &self.value(v).data()[o * d * inner..(o + 1) * d * inner];
                data.extend_from_slice(src);
            }
        }
        let value = Tensor::new(shape, data)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// Rows (first-axis slices) of `input` picked by `index`, in order.
    pub fn gather_rows(&mut self, input: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.is_empty() {
            return Err(Error::shape("gather_rows", &shape, &[index.len()]));
        }
        let rows = shape[0];
        let width: usize = shape[1..].iter().product();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Bounds { index: bad, len: rows });
        }
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(index.len() * width);
        for &i in index {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut out_shape = shape;
        out_shape[0] = index.len();
        let value = Tensor::new(out_shape, data)?;
        self.push(
            value,
            Op::GatherRows {
                input,
                index: index.to_vec(),
            },
            "gather_rows",
        )
    }

    /// Maximum along `axis` (removed). Ties go to the lowest index; the
    /// gradient is routed to the winning element only.
    pub fn reduce_max(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape("reduce_max", &shape, &[axis]));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * dim * inner + i;
                for d in 1..dim {
                    let idx = (o * dim + d) * inner + i;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                data.push(src[best]);
                argmax.push(best);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::ReduceMax { input, argmax }, "reduce_max")
    }

    pub fn reduce_mean(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape("reduce_mean", &shape, &[axis]));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.value(input).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * dim + d) * inner + i];
                }
            }
        }
        for v in &mut data {
            *v /= dim as f64;
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::ReduceMean { input, axis }, "reduce_mean")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Size("mean of empty tensor".into()));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("transpose", &shape, &[2]));
        }
        let (r, c) = (shape[0], shape[1]);
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data)?;
        self.push(value, Op::Transpose(x), "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape(x), "reshape")
    }

    /// Picks entries of the last axis.
    pub fn select_last(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape
            .last()
            .ok_or_else(|| Error::shape("select_last", &shape, cols))?;
        if cols.iter().any(|&c| c >= last) {
            return Err(Error::shape("select_last", &shape, cols));
        }
        let src = self.value(x).data();
        let data = src
            .chunks_exact(last)
            .flat_map(|row| cols.iter().map(move |&c| row[c]))
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = cols.len();
        let value = Tensor::new(out_shape, data)?;
        self.push(
            value,
            Op::SelectLast {
                input: x,
                cols: cols.to_vec(),
            },
            "select_last",
        )
    }

    /// Per-column standardization of an `M x C` input using its own statistics
    /// (biased variance).
    pub fn batch_normalize(&mut self, x: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::shape("batch_normalize", &shape, &[2]));
        }
        let (m, c) = (shape[0], shape[1]);
        let src = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for row in src.chunks_exact(c) {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for row in src.chunks_exact(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let data = src
            .chunks_exact(c)
            .flat_map(|row| (0..c).map(|j| (row[j] - mean[j]) * inv_std[j]).collect::<Vec<_>>())
            .collect();
        let value = Tensor::new(shape, data)?;
        let out = self.push(value, Op::BatchNormalize { input: x, inv_std }, "batch_normalize")?;
        Ok((out, BatchStats { mean, var }))
    }

    /// Solves `a x = b` for symmetric positive-definite `a (K x K)`, `b (K)`.
    pub fn solve_spd(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sa[0] != sa[1] || sb != [sa[0]] {
            return Err(Error::shape("solve_spd", &sa, &sb));
        }
        let k = sa[0];
        let av = self.value(a).data();
        let tol = 1e-8 * av.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..k {
            for j in 0..i {
                if (av[i * k + j] - av[j * k + i]).abs() > tol {
                    return Err(Error::Conditioning(format!(
                        "solve_spd: matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let factor = cholesky(av, k).ok_or_else(|| {
            Error::Conditioning("solve_spd: matrix is not positive definite".into())
        })?;
        let x = cholesky_solve(&factor, k, self.value(b).data());
        self.push(Tensor::vector(x), Op::SolveSpd { a, b, factor }, "solve_spd")
    }

    /// Jet monomials of an `N x 2` coordinate tensor, differentiated `dx`
    /// times in x and `dy` times in y: `N x N_n`.
    pub fn monomials(&mut self, xy: Var, order: JetOrder, dx: u32, dy: u32) -> Result<Var> {
        let shape = self.shape(xy).to_vec();
        if shape.len() != 2 || shape[1] != 2 {
            return Err(Error::shape("monomials", &shape, &[2]));
        }
        let value = Tensor::new(
            vec![shape[0], order.term_count()],
            monomial_rows(&pairs(self.value(xy)), order, dx, dy),
        )?;
        self.push(value, Op::Monomials { xy, order, dx, dy }, "monomials")
    }

    /// Scales every row to unit Euclidean length.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("normalize_rows", &shape, &[2]));
        }
        let c = shape[1];
        let src = self.value(x).data();
        let norms: Vec<f64> = src
            .chunks_exact(c)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        if norms.contains(&0.0) {
            return Err(Error::Degenerate("normalize_rows: zero-length row".into()));
        }
        let data = src
            .chunks_exact(c)
            .zip(&norms)
            .flat_map(|(r, n)| r.iter().map(move |v| v / n))
            .collect();
        let value = Tensor::new(shape, data)?;
        self.push(value, Op::NormalizeRows { input: x, norms }, "normalize_rows")
    }

    /// Row-wise `‖a_i × b_i‖` for `N x 3` inputs, giving `N` values.
    pub fn cross_norm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb || sa.len() != 2 || sa[1] != 3 {
            return Err(Error::shape("cross_norm", &sa, &sb));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data = va
            .chunks_exact(3)
            .zip(vb.chunks_exact(3))
            .map(|(x, y)| norm3(cross(x, y)))
            .collect();
        self.push(Tensor::vector(data), Op::CrossNorm(a, b), "cross_norm")
    }

    pub fn frobenius_norm(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(Tensor::scalar(n), Op::FrobeniusNorm(x), "frobenius_norm")
    }

    /// Runs the backward pass from a scalar `loss` and adds the parameter
    /// gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.accumulate(&grads);
        Ok(())
    }

    /// Parameter gradients of a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let adjoints = self.adjoints(loss)?;
        let mut grads = Gradients::with_len(0);
        for (node, adj) in self.nodes.iter().zip(&adjoints) {
            if let (Op::Param(id), Some(g)) = (&node.op, adj) {
                grads.add(*id, g);
            }
        }
        Ok(grads)
    }

    /// Gradient of a scalar `loss` with respect to any node (zeros if unreachable).
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Tensor> {
        let mut adjoints = self.adjoints(loss)?;
        Ok(adjoints[wrt.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shape(wrt))))
    }

    fn adjoints(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", shape, &[]));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(shape, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.backprop_node(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(adj)
    }

    fn backprop_node(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, gd, false, self.value(*b).data(), true, &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, self.value(*a).data(), true, gd, false, &mut gb);
                accumulate(adj, *a, sa, ga);
                accumulate(adj, *b, sb, gb);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                accumulate(adj, *a, out.shape(), gd.to_vec());
                let gb = fold_broadcast(gd, self.value(*b).len(), |x, _| sign * x);
                accumulate(adj, *b, self.shape(*b), gb);
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let inner = vb.len().max(1);
                let ga = gd.iter().enumerate().map(|(j, x)| x * vb[j % inner]).collect();
                accumulate(adj, *a, out.shape(), ga);
                let gb = fold_broadcast(gd, inner, |x, j| x * va[j]);
                accumulate(adj, *b, self.shape(*b), gb);
            }
            Op::Scale(x, c) => {
                accumulate(adj, *x, out.shape(), gd.iter().map(|v| v * c).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                accumulate(adj, *x, self.shape(*x), gd.to_vec());
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let d = self.shape(v)[*axis];
                    let mut gv = Vec::with_capacity(outer * d * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gv.extend_from_slice(&gd[start..start + d * inner]);
                    }
                    accumulate(adj, v, self.shape(v), gv);
                    offset += d;
                }
            }
            Op::GatherRows { input, index } => {
                let shape = self.shape(*input);
                let width: usize = shape[1..].iter().product();
                let mut gi = vec![0.0; self.value(*input).len()];
                for (r, &src) in index.iter().enumerate() {
                    for c in 0..width {
                        gi[src * width + c] += gd[r * width + c];
                    }
                }
                accumulate(adj, *input, shape, gi);
            }
            Op::ReduceMax { input, argmax } => {
                let mut gi = vec![0.0; self.value(*input).len()];
                for (gv, &src) in gd.iter().zip(argmax) {
                    gi[src] += gv;
                }
                accumulate(adj, *input, self.shape(*input), gi);
            }
            Op::ReduceMean { input, axis } => {
                let shape = self.shape(*input);
                let (outer, dim, inner) = split_axis(shape, *axis);
                let mut gi = vec![0.0; outer * dim * inner];
                for o in 0..outer {
                    for d in 0..dim {
                        for j in 0..inner {
                            gi[(o * dim + d) * inner + j] = gd[o * inner + j] / dim as f64;
                        }
                    }
                }
                accumulate(adj, *input, shape, gi);
            }
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                accumulate(adj, *x, self.shape(*x), vec![gd[0]; n]);
            }
            Op::Sigmoid(x) => {
                let gi = zip_map(gd, out.data(), |g, y| g * y * (1.0 - y));
                accumulate(adj, *x, out.shape(), gi);
            }
            Op::Tanh(x) => {
                let gi = zip_map(gd, out.data(), |g, y| g * (1.0 - y * y));
                accumulate(adj, *x, out.shape(), gi);
            }
            Op::LeakyRelu(x, slope) => {
                let gi = zip_map(gd, self.value(*x).data(), |g, v| if v > 0.0 { g } else { g * slope });
                accumulate(adj, *x, out.shape(), gi);
            }
            Op::Log(x) => {
                let gi = zip_map(gd, self.value(*x).data(), |g, v| g / v);
                accumulate(adj, *x, out.shape(), gi);
            }
            Op::ClampMin(x, lo) => {
                let gi = zip_map(gd, self.value(*x).data(), |g, v| if v > *lo { g } else { 0.0 });
                accumulate(adj, *x, out.shape(), gi);
            }
            Op::Map { input, derivative } => {
                accumulate(adj, *input, out.shape(), zip_map(gd, derivative, |g, d| g * d));
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let mut gi = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gi[j * r + i] = gd[i * c + j];
                    }
                }
                accumulate(adj, *x, self.shape(*x), gi);
            }
            Op::SelectLast { input, cols } => {
                let shape = self.shape(*input);
                let last = *shape.last().unwrap();
                let mut gi = vec![0.0; self.value(*input).len()];
                for (row, grow) in gi.chunks_exact_mut(last).zip(gd.chunks_exact(cols.len())) {
                    for (&c, gv) in cols.iter().zip(grow) {
                        row[c] += gv;
                    }
                }
                accumulate(adj, *input, shape, gi);
            }
            Op::BatchNormalize { input, inv_std } => {
                let (m, c) = (out.shape()[0], out.shape()[1]);
                let xhat = out.data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (grow, xrow) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * xrow[j];
                    }
                }
                let mf = m as f64;
                let mut gi = vec![0.0; m * c];
                for r in 0..m {
                    for j in 0..c {
                        let idx = r * c + j;
                        gi[idx] = inv_std[j] / mf
                            * (mf * gd[idx] - sum_g[j] - xhat[idx] * sum_gx[j]);
                    }
                }
                accumulate(adj, *input, out.shape(), gi);
            }
            Op::SolveSpd { a, b, factor } => {
                let k = out.len();
                let s = cholesky_solve(factor, k, gd);
                let x = out.data();
                let mut ga = vec![0.0; k * k];
                for r in 0..k {
                    for c in 0..k {
                        ga[r * k + c] = -0.5 * (s[r] * x[c] + x[r] * s[c]);
                    }
                }
                accumulate(adj, *a, self.shape(*a), ga);
                accumulate(adj, *b, self.shape(*b), s);
            }
            Op::Monomials { xy, order, dx, dy } => {
                let pts = pairs(self.value(*xy));
                let nn = order.term_count();
                let ddx = monomial_rows(&pts, *order, dx + 1, *dy);
                let ddy = monomial_rows(&pts, *order, *dx, dy + 1);
                let mut gi = vec![0.0; pts.len() * 2];
                for (r, grow) in gd.chunks_exact(nn).enumerate() {
                    let rx = &ddx[r * nn..(r + 1) * nn];
                    let ry = &ddy[r * nn..(r + 1) * nn];
                    gi[2 * r] = grow.iter().zip(rx).map(|(g, d)| g * d).sum();
                    gi[2 * r + 1] = grow.iter().zip(ry).map(|(g, d)| g * d).sum();
                }
                accumulate(adj, *xy, self.shape(*xy), gi);
            }
            Op::NormalizeRows { input, norms } => {
                let c = out.shape()[1];
                let y = out.data();
                let mut gi = vec![0.0; y.len()];
                for (r, n) in norms.iter().enumerate() {
                    let row = r * c..(r + 1) * c;
                    let dot: f64 = gd[row.clone()].iter().zip(&y[row.clone()]).map(|(a, b)| a * b).sum();
                    for idx in row {
                        gi[idx] = (gd[idx] - y[idx] * dot) / n;
                    }
                }
                accumulate(adj, *input, out.shape(), gi);
            }
            Op::CrossNorm(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = vec![0.0; va.len()];
                let mut gb = vec![0.0; vb.len()];
                for (r, (&gv, &norm)) in gd.iter().zip(out.data()).enumerate() {
                    if norm == 0.0 {
                        continue;
                    }
                    let x = &va[3 * r..3 * r + 3];
                    let y = &vb[3 * r..3 * r + 3];
                    let u = cross(x, y).map(|v| v / norm);
                    let da = cross(y, &u);
                    let db = cross(&u, x);
                    for c in 0..3 {
                        ga[3 * r + c] = gv * da[c];
                        gb[3 * r + c] = gv * db[c];
                    }
                }
                accumulate(adj, *a, self.shape(*a), ga);
                accumulate(adj, *b, self.shape(*b), gb);
            }
            Op::FrobeniusNorm(x) => {
                let norm = out.item();
                let gi = if norm == 0.0 {
                    vec![0.0; self.value(*x).len()]
                } else {
                    self.value(*x).data().iter().map(|v| gd[0] * v / norm).collect()
                };
                accumulate(adj, *x, self.shape(*x), gi);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, shape: &[usize], g: Vec<f64>) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape matches value"));
        }
    }
}

/// Sums a full-size gradient down to a broadcast operand of `inner` elements.
fn fold_broadcast(g: &[f64], inner: usize, f: impl Fn(f64, usize) -> f64) -> Vec<f64> {
    let inner = inner.max(1);
    let mut out = vec![0.0; inner];
    for (j, &v) in g.iter().enumerate() {
        out[j % inner] += f(v, j);
    }
    out
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn pairs(t: &Tensor) -> Vec<[f64; 2]> {
    t.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn reduce_max_routes_to_argmax() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![3.0, -1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let m = tape.reduce_max(x, 0).unwrap();
        assert_eq!(tape.value(m).item(), 3.0);
        let grads = tape.gradients(m).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sigmoid_and_concat_shapes() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);

        let a = tape.constant(Tensor::zeros(&[4, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 5]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[4, 8]);
        let bad = tape.constant(Tensor::zeros(&[3, 5]));
        let err = tape.concat(&[a, bad], 1).unwrap_err();
        assert!(err.to_string().contains("[4, 3]") && err.to_string().contains("[3, 5]"));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
        let c = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.add(a, c).is_err());
        let d = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.add(a, d).is_ok());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::zeros(&[2, 2])).unwrap();
        let unused = store.add("q", Tensor::zeros(&[3])).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let l = tape.sum(p).unwrap();
        tape.backward(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[1.0; 4]);
        assert_eq!(store.get(unused).grad.data(), &[0.0; 3]);
    }

    #[test]
    fn sigmoid_times_input_derivative() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.0)).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.constant(Tensor::scalar(2.0));
        let s = tape.sigmoid(wv).unwrap();
        let l = tape.mul(s, x).unwrap();
        let g = tape.gradients(l).unwrap();
        assert!((g.get(w).unwrap().item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(tape.gradients(a), Err(Error::Shape { .. })));
    }

    #[test]
    fn solve_spd_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::eye(3));
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let x = tape.solve_spd(a, b).unwrap();
        assert_eq!(tape.value(x).data(), &[1.0, 2.0, 3.0]);

        let a = tape.constant(t(&[2, 2], &[2.0, 0.0, 0.0, 4.0]));
        let b = tape.constant(Tensor::vector(vec![2.0, 4.0]));
        let x = tape.solve_spd(a, b).unwrap();
        assert!(tape.value(x).data().iter().all(|v| (v - 1.0).abs() < 1e-15));

        let bad = tape.constant(t(&[2, 2], &[1.0, 2.0, 2.0, 1.0]));
        assert!(matches!(tape.solve_spd(bad, b), Err(Error::Conditioning(_))));
    }

    #[test]
    fn cross_norm_and_frobenius() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2, 3], &[0.0, 1.0, 0.0, 0.0, 0.0, -1.0]));
        let c = tape.cross_norm(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 0.0]);
        let m = tape.constant(t(&[2, 2], &[3.0, 0.0, 0.0, 4.0]));
        let f = tape.frobenius_norm(m).unwrap();
        assert_eq!(tape.value(f).item(), 5.0);
    }

    #[test]
    fn non_finite_forward_rejected() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0]));
        assert!(matches!(tape.log(z), Err(Error::InvalidValue(_))));
    }
}
