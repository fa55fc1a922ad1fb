use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::SeededRng;

use super::groups::{assign_groups, regroup, GroupMapper, GroupedGraph};
use super::wgat::{BoundWgat, WgatLayer};
use super::BrainGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnrGatConfig {
    pub in_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub n_groups: usize,
    pub slope: f64,
    pub self_loops: bool,
    /// When false the second layer runs on the original graph (ablation).
    pub regroup: bool,
}

impl Default for AnrGatConfig {
    fn default() -> Self {
        AnrGatConfig {
            in_dim: 0,
            hidden1: 512,
            hidden2: 512,
            n_groups: 60,
            slope: 0.2,
            self_loops: true,
            regroup: true,
        }
    }
}

/// Attention → regroup → attention → max‖mean pooling → linear classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnrGat {
    pub config: AnrGatConfig,
    pub layer1: WgatLayer,
    pub mapper: GroupMapper,
    pub layer2: WgatLayer,
    /// `2F″ × 2`.
    pub cls_weight: ParamId,
    /// `1 × 2`.
    pub cls_bias: ParamId,
}

pub struct BoundAnrGat {
    layer1: BoundWgat,
    mapper: Var,
    layer2: BoundWgat,
    cls_weight: Var,
    cls_bias: Var,
}

/// Pooled embedding and class logits for one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct BrainReadout {
    pub embedding: Vec<f64>,
    pub logits: [f64; 2],
}

/// Every intermediate of one forward pass that later code inspects.
#[derive(Clone, Debug)]
pub struct BrainPass {
    pub logits: Var,
    pub embedding: Var,
    /// Node features after the first attention layer.
    pub h1: Var,
    pub alpha1: Var,
    pub assignment_probs: Var,
    pub grouped: Option<GroupedGraph>,
    pub h2: Var,
}

impl BrainPass {
    pub fn readout(&self, tape: &Tape) -> BrainReadout {
        let l = tape.values(self.logits);
        BrainReadout {
            embedding: tape.values(self.embedding).to_vec(),
            logits: [l[0], l[1]],
        }
    }
}

impl AnrGat {
    pub fn new(config: AnrGatConfig, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Self> {
        if config.in_dim == 0 || config.hidden1 == 0 || config.hidden2 == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut layer1 = WgatLayer::new(store, "wgat1", config.in_dim, config.hidden1, rng);
        let mapper = GroupMapper::new(store, "regroup", config.hidden1, config.n_groups, rng)?;
        let mut layer2 = WgatLayer::new(store, "wgat2", config.hidden1, config.hidden2, rng);
        for l in [&mut layer1, &mut layer2] {
            l.slope = config.slope;
            l.self_loops = config.self_loops;
        }
        let pooled = 2 * config.hidden2;
        let cls_weight = store.add("classifier.weight", super::glorot(rng, pooled, 2, pooled, 2));
        let cls_bias = store.add("classifier.bias", Tensor::zeros(1, 2));
        Ok(AnrGat {
            config,
            layer1,
            mapper,
            layer2,
            cls_weight,
            cls_bias,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.config.hidden2
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Result<BoundAnrGat> {
        Ok(BoundAnrGat {
            layer1: self.layer1.bind(tape, store)?,
            mapper: tape.param(store, self.mapper.weight),
            layer2: self.layer2.bind(tape, store)?,
            cls_weight: tape.param(store, self.cls_weight),
            cls_bias: tape.param(store, self.cls_bias),
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundAnrGat, brain: &BrainGraph) -> Result<BrainPass> {
        if brain.features.cols() != self.config.in_dim {
            return Err(Error::dim(
                "anr_gat input",
                brain.features.shape(),
                (brain.region_count(), self.config.in_dim),
            ));
        }
        let x = tape.constant(&brain.features);
        let first = self.layer1.forward(tape, &p.layer1, x, &brain.edges.graph)?;
        let (m, assignment) = assign_groups(tape, p.mapper, first.h)?;
        let (h2, grouped) = if self.config.regroup {
            let grouped = regroup(tape, first.h, m, &assignment, &brain.edges.graph)?;
            let out = self.layer2.forward(tape, &p.layer2, grouped.features, &grouped.edges)?;
            (out.h, Some(grouped))
        } else {
            let out = self.layer2.forward(tape, &p.layer2, first.h, &brain.edges.graph)?;
            (out.h, None)
        };
        let mx = tape.max_rows(h2);
        let mean = tape.mean_rows(h2);
        let embedding = tape.hconcat(&[mx, mean])?;
        let lin = tape.matmul(embedding, p.cls_weight)?;
        let logits = tape.add_row(lin, p.cls_bias)?;
        Ok(BrainPass {
            logits,
            embedding,
            h1: first.h,
            alpha1: first.alpha,
            assignment_probs: m,
            grouped,
            h2,
        })
    }

    /// Inference-only convenience: a fresh tape per graph.
    pub fn readout(&self, store: &ParamStore, brain: &BrainGraph) -> Result<(BrainReadout, Vec<usize>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, store)?;
        let pass = self.forward(&mut tape, &p, brain)?;
        let assignment = pass
            .grouped
            .as_ref()
            .map(|g| g.assignment.clone())
            .unwrap_or_default();
        Ok((pass.readout(&tape), assignment))
    }
}
