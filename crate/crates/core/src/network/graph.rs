//! Graph convolution over k-NN graphs built in feature space, the attention
//! gate that fuses point and neighborhood features, and the two-scale layer.

use super::layers::{Activation, Ctx, Initializer, Linear, MlpUnit};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Row `i` lists the `k` nearest other rows of a feature map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    rows: usize,
    k: usize,
}

impl NeighborIndex {
    pub fn new(rows: usize, k: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.len() != rows * k {
            return Err(Error::Size(format!(
                "{} neighbor entries for {rows} rows of {k}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Bounds { index: bad, len: rows });
        }
        Ok(NeighborIndex { indices, rows, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// All entries, row after row.
    pub fn flat(&self) -> &[usize] {
        &self.indices
    }

    /// Each row index repeated `k` times, aligned with [`NeighborIndex::flat`].
    pub fn centers(&self) -> Vec<usize> {
        (0..self.rows).flat_map(|i| std::iter::repeat_n(i, self.k)).collect()
    }
}

/// The `k` nearest other rows of an `N x C` feature tensor by Euclidean
/// distance, ties broken by ascending index.
pub fn knn_feature_graph(features: &Tensor, k: usize) -> Result<NeighborIndex> {
    let shape = features.shape();
    if shape.len() != 2 {
        return Err(Error::Size(format!("features must be N x C, got {shape:?}")));
    }
    let (n, c) = (shape[0], shape[1]);
    if k == 0 || k >= n {
        return Err(Error::Size(format!("need 0 < k < {n} feature neighbors, got {k}")));
    }
    let data = features.data();
    let sq: Vec<f64> = data.chunks_exact(c).map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut indices = Vec::with_capacity(n * k);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let fi = &data[i * c..(i + 1) * c];
        dist.clear();
        for j in (0..n).filter(|&j| j != i) {
            let fj = &data[j * c..(j + 1) * c];
            let d = if c <= 8 {
                fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum()
            } else {
                let dot: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
                (sq[i] + sq[j] - 2.0 * dot).max(0.0)
            };
            dist.push((d, j));
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        dist.select_nth_unstable_by(k - 1, cmp);
        let head = &mut dist[..k];
        head.sort_unstable_by(cmp);
        indices.extend(head.iter().map(|&(_, j)| j));
    }
    NeighborIndex::new(n, k, indices)
}

/// `N x k x 2C` tensor whose entry `(i, j)` is `[f_j - f_i, f_i]`.
pub fn edge_features(ctx: &mut Ctx, features: Var, idx: &NeighborIndex) -> Result<Var> {
    let shape = ctx.tape.shape(features).to_vec();
    if shape.len() != 2 || shape[0] != idx.rows() {
        return Err(Error::shape("edge_features", &shape, &[idx.rows(), idx.k()]));
    }
    let (n, c) = (shape[0], shape[1]);
    let neighbors = ctx.tape.gather_rows(features, idx.flat())?;
    let centers = ctx.tape.gather_rows(features, &idx.centers())?;
    let delta = ctx.tape.sub(neighbors, centers)?;
    let edges = ctx.tape.concat(&[delta, centers], 1)?;
    ctx.tape.reshape(edges, &[n, idx.k(), 2 * c])
}

/// Shared MLP over edge features followed by a channelwise max over neighbors.
#[derive(Debug, Clone)]
pub struct GraphConv {
    pub mlp: MlpUnit,
}

impl GraphConv {
    pub fn new(init: &mut Initializer, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        Ok(GraphConv {
            mlp: MlpUnit::new(init, name, 2 * inputs, outputs, Activation::LeakyRelu)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, features: Var, idx: &NeighborIndex) -> Result<Var> {
        let edges = edge_features(ctx, features, idx)?;
        let c2 = ctx.tape.shape(edges)[2];
        if c2 != self.mlp.linear.inputs {
            return Err(Error::shape("graph_conv", &[c2], &[self.mlp.linear.inputs]));
        }
        let (n, k) = (idx.rows(), idx.k());
        let flat = ctx.tape.reshape(edges, &[n * k, c2])?;
        let mapped = self.mlp.forward(ctx, flat)?;
        let mapped = ctx.tape.reshape(mapped, &[n, k, self.mlp.outputs()])?;
        ctx.tape.reduce_max(mapped, 1)
    }
}

/// Channel attention gate mixing point features `F` with neighborhood
/// features `F'`: `s = σ(φ(mean_points(F + F')))`, output `s⊙F + (1-s)⊙F'`.
#[derive(Debug, Clone)]
pub struct AdaptiveFuse {
    pub squeeze: Linear,
    pub excite: Linear,
}

/// Output of [`AdaptiveFuse::forward_with_gate`].
pub struct Fused {
    pub output: Var,
    /// `s_F`, one value per channel.
    pub gate: Var,
    /// `s_F' = 1 - s_F`.
    pub complement: Var,
}

impl AdaptiveFuse {
    pub fn new(init: &mut Initializer, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = (channels / reduction).max(1);
        Ok(AdaptiveFuse {
            squeeze: Linear::new(init, &format!("{name}.squeeze"), channels, hidden)?,
            excite: Linear::new(init, &format!("{name}.excite"), hidden, channels)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, point: Var, neighborhood: Var) -> Result<Var> {
        Ok(self.forward_with_gate(ctx, point, neighborhood)?.output)
    }

    pub fn forward_with_gate(&self, ctx: &mut Ctx, point: Var, neighborhood: Var) -> Result<Fused> {
        let (sp, sn) = (ctx.tape.shape(point).to_vec(), ctx.tape.shape(neighborhood).to_vec());
        if sp != sn || sp.len() != 2 {
            return Err(Error::shape("adaptive_fuse", &sp, &sn));
        }
        let c = sp[1];
        let sum = ctx.tape.add(point, neighborhood)?;
        let pooled = ctx.tape.reduce_mean(sum, 0)?;
        let pooled = ctx.tape.reshape(pooled, &[1, c])?;
        let hidden = self.squeeze.forward(ctx, pooled)?;
        let hidden = ctx.tape.relu(hidden)?;
        let logits = self.excite.forward(ctx, hidden)?;
        let logits = ctx.tape.reshape(logits, &[c])?;
        let gate = ctx.tape.sigmoid(logits)?;
        let complement = ctx.tape.rsub_scalar(1.0, gate)?;
        let a = ctx.tape.mul(point, gate)?;
        let b = ctx.tape.mul(neighborhood, complement)?;
        let output = ctx.tape.add(a, b)?;
        Ok(Fused {
            output,
            gate,
            complement,
        })
    }
}

/// Graph convolution at scale `k1` (optionally gated) feeding the `k2`
/// neighborhoods of every point, mapped and max-pooled channelwise.
#[derive(Debug, Clone)]
pub struct MultiScale {
    pub phi: MlpUnit,
}

impl MultiScale {
    pub fn new(init: &mut Initializer, name: &str, inputs: usize, large: usize, outputs: usize) -> Result<Self> {
        Ok(MultiScale {
            phi: MlpUnit::new(init, name, inputs + large, outputs, Activation::LeakyRelu)?,
        })
    }

    /// `features`: block input `N x C`; `large_scale`: `f'_{s1}` (`N x C'`).
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        features: Var,
        large_scale: Var,
        small: &NeighborIndex,
    ) -> Result<Var> {
        let (n, k) = (small.rows(), small.k());
        let gathered = ctx.tape.gather_rows(features, small.flat())?;
        let repeated = ctx.tape.gather_rows(large_scale, &small.centers())?;
        let joined = ctx.tape.concat(&[gathered, repeated], 1)?;
        let mapped = self.phi.forward(ctx, joined)?;
        let mapped = ctx.tape.reshape(mapped, &[n, k, self.phi.outputs()])?;
        ctx.tape.reduce_max(mapped, 1)
    }
}

/// One graph block: graph conv at `k1`, optional attention fusion with the
/// (projected) block input, optional second scale at `k2`.
#[derive(Debug, Clone)]
pub struct GraphBlock {
    pub conv: GraphConv,
    pub projection: Option<MlpUnit>,
    pub fuse: Option<AdaptiveFuse>,
    pub multi_scale: Option<MultiScale>,
    pub k1: usize,
    pub k2: usize,
}

impl GraphBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Initializer,
        name: &str,
        inputs: usize,
        outputs: usize,
        k1: usize,
        k2: usize,
        adaptive: bool,
        multi_scale: bool,
        reduction: usize,
    ) -> Result<Self> {
        let conv = GraphConv::new(init, &format!("{name}.conv"), inputs, outputs)?;
        let projection = if adaptive && inputs != outputs {
            Some(MlpUnit::new(
                init,
                &format!("{name}.project"),
                inputs,
                outputs,
                Activation::LeakyRelu,
            )?)
        } else {
            None
        };
        let fuse = if adaptive {
            Some(AdaptiveFuse::new(init, &format!("{name}.fuse"), outputs, reduction)?)
        } else {
            None
        };
        let multi_scale = if multi_scale {
            Some(MultiScale::new(init, &format!("{name}.scale2"), inputs, outputs, outputs)?)
        } else {
            None
        };
        Ok(GraphBlock {
            conv,
            projection,
            fuse,
            multi_scale,
            k1,
            k2,
        })
    }

    pub fn outputs(&self) -> usize {
        self.conv.mlp.outputs()
    }

    pub fn forward(&self, ctx: &mut Ctx, features: Var) -> Result<Var> {
        let large = knn_feature_graph(ctx.tape.value(features), self.k1)?;
        let mut local = self.conv.forward(ctx, features, &large)?;
        if let Some(fuse) = &self.fuse {
            let point = match &self.projection {
                Some(p) => p.forward(ctx, features)?,
                None => features,
            };
            local = fuse.forward(ctx, point, local)?;
        }
        match &self.multi_scale {
            Some(ms) => {
                let small = knn_feature_graph(ctx.tape.value(features), self.k2)?;
                ms.forward(ctx, features, local, &small)
            }
            None => Ok(local),
        }
    }
}
