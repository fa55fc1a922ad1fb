//! Training objectives.
//!
//! Both stages minimize cross-entropy plus a similarity term that pulls the
//! row-softmaxed scaled dot-product similarity of a batch of embeddings
//! towards the label-agreement matrix.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Values of each loss term after a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub sim_node: f64,
    pub sim_fusion: Option<f64>,
}

/// Multipliers for each term; all 1 reproduces the plain sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub cls: f64,
    pub sim_node: f64,
    pub sim_fusion: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 1.0,
            sim_node: 1.0,
            sim_fusion: 1.0,
        }
    }
}

/// Tape handles of a composite loss.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub cls: Var,
    pub sim_node: Var,
    pub sim_fusion: Option<Var>,
}

impl LossTerms {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            total: tape.scalar_value(self.total),
            cls: tape.scalar_value(self.cls),
            sim_node: tape.scalar_value(self.sim_node),
            sim_fusion: self.sim_fusion.map(|v| tape.scalar_value(v)),
        }
    }
}

fn check_labels(n: usize, labels: &[usize], classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::dim("labels", (n, 1), (labels.len(), 1)));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Contract(format!("label {bad} outside 0..{classes}")));
    }
    Ok(())
}

/// Mean negative log-likelihood of the true class under a row softmax.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = tape.shape(logits);
    check_labels(n, labels, c)?;
    let mut onehot = Tensor::zeros(n, c);
    for (i, &y) in labels.iter().enumerate() {
        onehot.set(i, y, 1.0);
    }
    let logp = tape.log_softmax_rows(logits);
    let mask = tape.constant(&onehot);
    let picked = tape.mul(logp, mask)?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0 / n as f64))
}

/// `T[i][j] = 1` when labels agree.
pub fn label_agreement(labels: &[usize]) -> Tensor {
    let n = labels.len();
    let mut t = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                t.set(i, j, 1.0);
            }
        }
    }
    t
}

/// `‖softmax_rows(H Hᵀ / √d) − T‖²_F / N²`.
pub fn similarity_loss(tape: &mut Tape, h: Var, labels: &[usize]) -> Result<Var> {
    let (n, d) = tape.shape(h);
    if n < 2 {
        return Err(Error::Contract("similarity loss needs at least two embeddings".into()));
    }
    if labels.len() != n {
        return Err(Error::dim("labels", (n, d), (labels.len(), 1)));
    }
    let ht = tape.transpose(h);
    let gram = tape.matmul(h, ht)?;
    let scaled = tape.scale(gram, 1.0 / (d as f64).sqrt());
    let s_norm = tape.softmax_rows(scaled);
    let target = tape.constant(&label_agreement(labels));
    let diff = tape.sub(s_norm, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / (n * n) as f64))
}

/// Value of [`similarity_loss`] without building a persistent tape.
pub fn similarity_loss_value(h: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(h);
    let l = similarity_loss(&mut tape, v, labels)?;
    Ok(tape.scalar_value(l))
}

/// Stage one: cross-entropy on graph logits plus similarity of the pooled
/// graph embeddings of the batch.
pub fn stage1_loss(
    tape: &mut Tape,
    logits: Var,
    embeddings: Var,
    labels: &[usize],
    weights: LossWeights,
) -> Result<LossTerms> {
    let cls = cross_entropy(tape, logits, labels)?;
    let sim = similarity_loss(tape, embeddings, labels)?;
    let a = tape.scale(cls, weights.cls);
    let b = tape.scale(sim, weights.sim_node);
    let total = tape.add(a, b)?;
    Ok(LossTerms {
        total,
        cls,
        sim_node: sim,
        sim_fusion: None,
    })
}

/// Stage two: cross-entropy plus independent similarity terms on the
/// post-convolution node features and on the fused features.
pub fn stage2_loss(
    tape: &mut Tape,
    logits: Var,
    node_embeddings: Var,
    fused_embeddings: Option<Var>,
    labels: &[usize],
    weights: LossWeights,
) -> Result<LossTerms> {
    let cls = cross_entropy(tape, logits, labels)?;
    let sim_node = similarity_loss(tape, node_embeddings, labels)?;
    let a = tape.scale(cls, weights.cls);
    let b = tape.scale(sim_node, weights.sim_node);
    let mut total = tape.add(a, b)?;
    let sim_fusion = match fused_embeddings {
        Some(f) => {
            let s = similarity_loss(tape, f, labels)?;
            let c = tape.scale(s, weights.sim_fusion);
            total = tape.add(total, c)?;
            Some(s)
        }
        None => None,
    };
    Ok(LossTerms {
        total,
        cls,
        sim_node,
        sim_fusion,
    })
}

/// Explicit-loop evaluations of the similarity objective and its
/// hand-derived gradient, kept independent of the tape for verification.
pub mod reference {
    use crate::tensor::Tensor;

    fn normalized_similarity(h: &Tensor) -> Vec<Vec<f64>> {
        let (n, d) = h.shape();
        let scale = 1.0 / (d as f64).sqrt();
        (0..n)
            .map(|i| {
                let s: Vec<f64> = (0..n)
                    .map(|j| h.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            })
            .collect()
    }

    fn agree(labels: &[usize], i: usize, j: usize) -> f64 {
        if labels[i] == labels[j] {
            1.0
        } else {
            0.0
        }
    }

    pub fn similarity_loss(h: &Tensor, labels: &[usize]) -> f64 {
        let n = h.rows();
        let sp = normalized_similarity(h);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += (sp[i][j] - agree(labels, i, j)).powi(2);
            }
        }
        total / (n * n) as f64
    }

    /// The published closed-form gradient for node `i`:
    /// `2/(N²√d) Σⱼ (S'ᵢⱼ − 𝟙[yᵢ=yⱼ]) S'ᵢⱼ (hⱼ − Σₖ S'ᵢₖ hₖ)`.
    ///
    /// This is the derivative through row `i` of the similarity matrix
    /// only, i.e. with `hᵢ` acting as the query. See [`similarity_grad_key_side`]
    /// for the remaining part of the total derivative.
    pub fn similarity_loss_grad_oracle(h: &Tensor, labels: &[usize]) -> Tensor {
        let (n, d) = h.shape();
        let sp = normalized_similarity(h);
        let coef = 2.0 / ((n * n) as f64 * (d as f64).sqrt());
        let mut out = Tensor::zeros(n, d);
        for i in 0..n {
            let mut mean = vec![0.0; d];
            for k in 0..n {
                for c in 0..d {
                    mean[c] += sp[i][k] * h.get(k, c);
                }
            }
            for j in 0..n {
                let w = (sp[i][j] - agree(labels, i, j)) * sp[i][j];
                for c in 0..d {
                    let cur = out.get(i, c);
                    out.set(i, c, cur + coef * w * (h.get(j, c) - mean[c]));
                }
            }
        }
        out
    }

    /// Derivative contributed through the other rows of the similarity
    /// matrix, where `hᵢ` acts as a key: `Σⱼ (∂L/∂Sⱼᵢ) hⱼ / √d`.
    pub fn similarity_grad_key_side(h: &Tensor, labels: &[usize]) -> Tensor {
        let (n, d) = h.shape();
        let sp = normalized_similarity(h);
        let nn = (n * n) as f64;
        // dL/dS[j][i] = S'ⱼᵢ (Rⱼᵢ − Σₖ Rⱼₖ S'ⱼₖ), R = 2(S' − T)/N²
        let mut ds = vec![vec![0.0; n]; n];
        for j in 0..n {
            let r: Vec<f64> = (0..n).map(|k| 2.0 * (sp[j][k] - agree(labels, j, k)) / nn).collect();
            let dot: f64 = (0..n).map(|k| r[k] * sp[j][k]).sum();
            for i in 0..n {
                ds[j][i] = sp[j][i] * (r[i] - dot);
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = Tensor::zeros(n, d);
        for i in 0..n {
            for j in 0..n {
                for c in 0..d {
                    let cur = out.get(i, c);
                    out.set(i, c, cur + ds[j][i] * h.get(j, c) * scale);
                }
            }
        }
        out
    }
}
