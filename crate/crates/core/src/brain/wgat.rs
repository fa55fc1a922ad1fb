use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Unary, Var};
use crate::error::Result;
use crate::semantic::WeightedEdges;
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::SeededRng;

use super::glorot;

/// Single-head graph attention whose logits are scaled by the static edge
/// weight before normalization.
///
/// `weight` is stored input-major (`F × F′`) so the layer computes `Z = X W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WgatLayer {
    pub weight: ParamId,
    /// `2F′ × 1`: source half then neighbor half.
    pub attn: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub slope: f64,
    pub activation: Unary,
    pub self_loops: bool,
}

/// Parameters of a [`WgatLayer`] placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundWgat {
    pub weight: Var,
    pub attn_src: Var,
    pub attn_dst: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct WgatOutput {
    pub h: Var,
    /// Dense `n × n` attention coefficients; row `i` is zero outside 𝒩(i).
    pub alpha: Var,
}

impl WgatLayer {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(rng, in_dim, out_dim, in_dim, out_dim));
        let attn = store.add(format!("{name}.attn"), glorot(rng, 2 * out_dim, 1, 2 * out_dim, 1));
        WgatLayer {
            weight,
            attn,
            in_dim,
            out_dim,
            slope: 0.2,
            activation: Unary::Relu,
            self_loops: true,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<BoundWgat> {
        let weight = tape.param(store, self.weight);
        let attn = tape.param(store, self.attn);
        let attn_src = tape.slice_rows(attn, 0, self.out_dim)?;
        let attn_dst = tape.slice_rows(attn, self.out_dim, self.out_dim)?;
        Ok(BoundWgat {
            weight,
            attn_src,
            attn_dst,
        })
    }

    /// Edges are undirected; each contributes both directions. With
    /// `self_loops`, every node also attends to itself with weight 1.
    pub fn forward(&self, tape: &mut Tape, p: &BoundWgat, x: Var, graph: &WeightedEdges) -> Result<WgatOutput> {
        let n = tape.shape(x).0;
        let z = tape.matmul(x, p.weight)?;
        let src = tape.matmul(z, p.attn_src)?;
        let dst = tape.matmul(z, p.attn_dst)?;
        let dst_row = tape.transpose(dst);
        let pre = tape.outer_add(src, dst_row)?;
        let e = tape.leaky_relu(pre, self.slope);

        let (weights, mask) = dense_neighborhood(n, graph, self.self_loops);
        let w = tape.constant(&weights);
        let scaled = tape.mul(e, w)?;
        let alpha = tape.masked_softmax_rows(scaled, mask)?;
        let agg = tape.matmul(alpha, z)?;
        let h = tape.unary(agg, self.activation);
        Ok(WgatOutput { h, alpha })
    }
}

/// Dense edge-weight matrix and neighborhood mask.
pub(crate) fn dense_neighborhood(n: usize, graph: &WeightedEdges, self_loops: bool) -> (Tensor, Vec<bool>) {
    let mut weights = Tensor::zeros(n, n);
    let mut mask = vec![false; n * n];
    for &(u, v, w) in &graph.edges {
        weights.set(u, v, w);
        weights.set(v, u, w);
        mask[u * n + v] = true;
        mask[v * n + u] = true;
    }
    if self_loops {
        for i in 0..n {
            weights.set(i, i, 1.0);
            mask[i * n + i] = true;
        }
    }
    (weights, mask)
}
