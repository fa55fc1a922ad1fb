//! Node-importance and co-assignment probes.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

use super::model::AnrGat;
use super::BrainGraph;

/// Grad-CAM over node activations: channel weights are the node-mean of
/// `∂target/∂A`, and node `i` scores `ReLU(Σₖ weightₖ · A[i, k])`.
///
/// `target` must be a scalar already on `tape` downstream of `activations`.
/// Existing gradients on the tape are cleared.
pub fn grad_cam(tape: &mut Tape, activations: Var, target: Var) -> Result<Vec<f64>> {
    tape.zero_grad();
    tape.backward(target)?;
    let (n, f) = tape.shape(activations);
    let grad = tape.grad(activations).unwrap_or_else(|| Tensor::zeros(n, f));
    let act = tape.values(activations);
    let weights: Vec<f64> = (0..f)
        .map(|k| (0..n).map(|i| grad.get(i, k)).sum::<f64>() / n as f64)
        .collect();
    Ok((0..n)
        .map(|i| {
            let s: f64 = (0..f).map(|k| weights[k] * act[i * f + k]).sum();
            s.max(0.0)
        })
        .collect())
}

/// Importance of each region for `target_class`, read after the first
/// attention layer.
pub fn gradcam_node_importance(model: &AnrGat, store: &ParamStore, brain: &BrainGraph, target_class: usize) -> Result<Vec<f64>> {
    if target_class > 1 {
        return Err(Error::Contract(format!("target class {target_class} outside 0..2")));
    }
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, store)?;
    let pass = model.forward(&mut tape, &p, brain)?;
    let mut pick = Tensor::zeros(1, 2);
    pick.set(0, target_class, 1.0);
    let pick = tape.constant(&pick);
    let sel = tape.mul(pass.logits, pick)?;
    let target = tape.sum(sel);
    grad_cam(&mut tape, pass.h1, target)
}

/// Indices of the `k` largest scores, descending; ties by lower index.
pub fn top_nodes(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Fraction of samples in which each region pair shares a group.
pub fn coassignment_frequency(assignments: &[Vec<usize>]) -> Result<Tensor> {
    let first = assignments
        .first()
        .ok_or_else(|| Error::Contract("co-assignment needs at least one sample".into()))?;
    let r = first.len();
    let mut counts = Tensor::zeros(r, r);
    for a in assignments {
        if a.len() != r {
            return Err(Error::dim("coassignment", (r, 1), (a.len(), 1)));
        }
        for u in 0..r {
            for v in 0..r {
                if a[u] == a[v] {
                    let c = counts.get(u, v);
                    counts.set(u, v, c + 1.0);
                }
            }
        }
    }
    let total = assignments.len() as f64;
    Ok(counts.map(|c| c / total))
}

/// The `k` most frequently co-assigned distinct pairs `(u, v, freq)`, `u < v`;
/// ties by `(u, v)`.
pub fn top_coassigned_pairs(freq: &Tensor, k: usize) -> Vec<(usize, usize, f64)> {
    let r = freq.rows();
    let mut pairs: Vec<(usize, usize, f64)> = (0..r)
        .flat_map(|u| (u + 1..r).map(move |v| (u, v)))
        .map(|(u, v)| (u, v, freq.get(u, v)))
        .collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    pairs.truncate(k);
    pairs
}
