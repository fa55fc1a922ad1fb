use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::semantic::WeightedEdges;
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::SeededRng;

use super::glorot;

/// Learned projection of node features onto at most `n_groups` groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMapper {
    /// `F′ × N_g`.
    pub weight: ParamId,
    pub n_groups: usize,
}

impl GroupMapper {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, n_groups: usize, rng: &mut SeededRng) -> Result<Self> {
        if n_groups == 0 {
            return Err(Error::Config("group count must be at least 1".into()));
        }
        let weight = store.add(format!("{name}.weight"), glorot(rng, in_dim, n_groups, in_dim, n_groups));
        Ok(GroupMapper { weight, n_groups })
    }
}

/// Coarsened graph: one node per non-empty group.
#[derive(Clone, Debug)]
pub struct GroupedGraph {
    /// Group index (in `0..N_g`) of every original node.
    pub assignment: Vec<usize>,
    /// Original group index of each coarse node, ascending.
    pub used_groups: Vec<usize>,
    /// `G_used × F′`.
    pub features: Var,
    /// Coarse edges, indexed by position in `used_groups`.
    pub edges: WeightedEdges,
}

impl GroupedGraph {
    pub fn group_count(&self) -> usize {
        self.used_groups.len()
    }
}

/// `M = softmax_rows(H W_r)` and its row-wise argmax (ties to the lowest
/// group). The assignment is a detached integer decision; gradients only
/// flow through `M`.
pub fn assign_groups(tape: &mut Tape, weight: Var, h: Var) -> Result<(Var, Vec<usize>)> {
    let logits = tape.matmul(h, weight)?;
    let m = tape.softmax_rows(logits);
    let (n, g) = tape.shape(m);
    let vals = tape.values(m);
    let assignment = (0..n)
        .map(|i| {
            let row = &vals[i * g..(i + 1) * g];
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok((m, assignment))
}

/// Aggregates node features into their assigned groups and remaps edges.
///
/// A group's feature is `Σ_{i ∈ g} M[i, g] · H[i]`. A coarse edge joins two
/// distinct groups whenever some original edge crosses them; its weight is
/// the mean weight of those crossing edges. Empty groups disappear.
pub fn regroup(tape: &mut Tape, h: Var, m: Var, assignment: &[usize], edges: &WeightedEdges) -> Result<GroupedGraph> {
    let (n, n_groups) = tape.shape(m);
    if assignment.len() != n || tape.shape(h).0 != n {
        return Err(Error::dim("regroup", tape.shape(h), (assignment.len(), n_groups)));
    }
    if edges.node_count != n {
        return Err(Error::Contract(format!(
            "edge set covers {} nodes, features have {n}",
            edges.node_count
        )));
    }
    let mut used_groups: Vec<usize> = assignment.to_vec();
    used_groups.sort_unstable();
    used_groups.dedup();
    let position: BTreeMap<usize, usize> = used_groups.iter().enumerate().map(|(p, &g)| (g, p)).collect();

    // membership mask restricted to used columns: n × G_used
    let mut select = Tensor::zeros(n_groups, used_groups.len());
    for (p, &g) in used_groups.iter().enumerate() {
        select.set(g, p, 1.0);
    }
    let mut member = Tensor::zeros(n, n_groups);
    for (i, &g) in assignment.iter().enumerate() {
        member.set(i, g, 1.0);
    }
    let member = tape.constant(&member);
    let hard = tape.mul(m, member)?;
    let select = tape.constant(&select);
    let pooled = tape.matmul(hard, select)?;
    let pooled_t = tape.transpose(pooled);
    let features = tape.matmul(pooled_t, h)?;

    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for &(u, v, w) in &edges.edges {
        let (gu, gv) = (position[&assignment[u]], position[&assignment[v]]);
        if gu == gv {
            continue;
        }
        let e = sums.entry((gu.min(gv), gu.max(gv))).or_insert((0.0, 0));
        e.0 += w;
        e.1 += 1;
    }
    let coarse = sums
        .into_iter()
        .map(|((a, b), (s, c))| (a, b, s / c as f64))
        .collect();
    Ok(GroupedGraph {
        assignment: assignment.to_vec(),
        used_groups: used_groups.clone(),
        features,
        edges: WeightedEdges::new(used_groups.len(), coarse)?,
    })
}

/// Fraction of the `n_groups` slots that received at least one node.
pub fn group_assignment_ratio(assignment: &[usize], n_groups: usize) -> f64 {
    let mut seen = vec![false; n_groups];
    for &g in assignment {
        if g < n_groups {
            seen[g] = true;
        }
    }
    seen.iter().filter(|&&s| s).count() as f64 / n_groups as f64
}
