use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Unary, Var};
use crate::brain::glorot;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, RowSparse};
use crate::SeededRng;

/// `n × n` adjacency with row `i` holding `1/|𝒩(i)|` at each neighbor.
/// Duplicate edges count once; rows without neighbors stay empty.
pub fn normalized_adjacency(n: usize, edges: &[(usize, usize, f64)]) -> Arc<RowSparse> {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j, _) in edges {
        rows[i].push(j);
    }
    let rows = rows
        .into_iter()
        .map(|mut r| {
            r.sort_unstable();
            r.dedup();
            let w = 1.0 / r.len() as f64;
            r.into_iter().map(|j| (j, w)).collect()
        })
        .collect();
    Arc::new(RowSparse::new(n, rows).expect("edge endpoints below n"))
}

/// Heterogeneous graph convolution: one transform per condition, averaged,
/// plus a separate self transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HgcnLayer {
    /// `F × F′` per condition, input-major.
    pub weights: Vec<ParamId>,
    pub self_weight: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Unary,
}

#[derive(Clone, Debug)]
pub struct BoundHgcn {
    pub weights: Vec<Var>,
    pub self_weight: Option<Var>,
}

impl HgcnLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_conditions: usize,
        in_dim: usize,
        out_dim: usize,
        self_term: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if n_conditions == 0 {
            return Err(Error::Config("heterogeneous convolution needs at least one condition".into()));
        }
        let weights = (0..n_conditions)
            .map(|c| store.add(format!("{name}.w{c}"), glorot(rng, in_dim, out_dim, in_dim, out_dim)))
            .collect();
        let self_weight =
            self_term.then(|| store.add(format!("{name}.w_self"), glorot(rng, in_dim, out_dim, in_dim, out_dim)));
        Ok(HgcnLayer {
            weights,
            self_weight,
            in_dim,
            out_dim,
            activation: Unary::Relu,
        })
    }

    pub fn n_conditions(&self) -> usize {
        self.weights.len()
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundHgcn {
        BoundHgcn {
            weights: self.weights.iter().map(|&w| tape.param(store, w)).collect(),
            self_weight: self.self_weight.map(|w| tape.param(store, w)),
        }
    }

    /// `σ((1/|𝒞|) Σ_c Â^c H W^c + H W^self)` with `Â^c` from
    /// [`normalized_adjacency`].
    pub fn forward(&self, tape: &mut Tape, p: &BoundHgcn, h: Var, adjacencies: &[Arc<RowSparse>]) -> Result<Var> {
        if adjacencies.len() != self.weights.len() {
            return Err(Error::Contract(format!(
                "{} adjacencies for {} condition weights",
                adjacencies.len(),
                self.weights.len()
            )));
        }
        let mut acc: Option<Var> = None;
        for (adj, &w) in adjacencies.iter().zip(&p.weights) {
            let hw = tape.matmul(h, w)?;
            let term = tape.sparse_matmul(adj, hw)?;
            acc = Some(match acc {
                None => term,
                Some(prev) => tape.add(prev, term)?,
            });
        }
        let mut pre = tape.scale(acc.expect("at least one condition"), 1.0 / adjacencies.len() as f64);
        if let Some(ws) = p.self_weight {
            let s = tape.matmul(h, ws)?;
            pre = tape.add(pre, s)?;
        }
        Ok(tape.unary(pre, self.activation))
    }
}
