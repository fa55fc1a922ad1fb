use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::brain::glorot;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, RowSparse, Tensor};
use crate::SeededRng;

use super::fusion::{BoundFusion, FusionLayer, FusionMode};
use super::hgcn::{BoundHgcn, HgcnLayer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationModelConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub n_conditions: usize,
    /// Width of the encoded phenotype matrix; ignored without fusion.
    pub pheno_dim: usize,
    pub fusion: FusionMode,
    pub self_term: bool,
}

impl Default for PopulationModelConfig {
    fn default() -> Self {
        PopulationModelConfig {
            in_dim: 0,
            hidden: 128,
            n_conditions: 1,
            pheno_dim: 0,
            fusion: FusionMode::Gated,
            self_term: true,
        }
    }
}

/// HGCN → optional phenotype fusion → linear classifier, on all subjects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel {
    pub config: PopulationModelConfig,
    pub hgcn: HgcnLayer,
    pub fusion: FusionLayer,
    /// `hidden × 2`.
    pub cls_weight: ParamId,
    pub cls_bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct PopulationPass {
    pub logits: Var,
    /// HGCN output for every subject.
    pub node: Var,
    /// Fusion output; absent when fusion is disabled.
    pub fused: Option<Var>,
    pub gate: Option<Var>,
}

struct Bound {
    hgcn: BoundHgcn,
    fusion: BoundFusion,
    cls_weight: Var,
    cls_bias: Var,
}

impl PopulationModel {
    pub fn new(config: PopulationModelConfig, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Self> {
        if config.in_dim == 0 || config.hidden == 0 {
            return Err(Error::Config("population model widths must be positive".into()));
        }
        let hgcn = HgcnLayer::new(
            store,
            "pop.hgcn",
            config.n_conditions,
            config.in_dim,
            config.hidden,
            config.self_term,
            rng,
        )?;
        let fusion = FusionLayer::new(store, "pop.fusion", config.fusion, config.hidden, config.pheno_dim, rng);
        let cls_weight = store.add("pop.cls_w", glorot(rng, config.hidden, 2, config.hidden, 2));
        let cls_bias = store.add("pop.cls_b", Tensor::zeros(1, 2));
        Ok(PopulationModel {
            config,
            hgcn,
            fusion,
            cls_weight,
            cls_bias,
        })
    }

    fn bind(&self, tape: &mut Tape, store: &ParamStore) -> Bound {
        Bound {
            hgcn: self.hgcn.bind(tape, store),
            fusion: self.fusion.bind(tape, store),
            cls_weight: tape.param(store, self.cls_weight),
            cls_bias: tape.param(store, self.cls_bias),
        }
    }

    /// `features` is `n × in_dim`; `pheno` is `n × pheno_dim` and only read
    /// when fusion is enabled.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: &Tensor,
        adjacencies: &[Arc<RowSparse>],
        pheno: &Tensor,
    ) -> Result<PopulationPass> {
        let p = self.bind(tape, store);
        let x = tape.constant(features);
        self.forward_bound(tape, &p, x, adjacencies, pheno)
    }

    fn forward_bound(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        adjacencies: &[Arc<RowSparse>],
        pheno: &Tensor,
    ) -> Result<PopulationPass> {
        let node = self.hgcn.forward(tape, &p.hgcn, x, adjacencies)?;
        let (head, fused, gate) = if self.config.fusion == FusionMode::None {
            (node, None, None)
        } else {
            if pheno.shape() != (tape.shape(x).0, self.config.pheno_dim) {
                return Err(Error::dim(
                    "phenotype features",
                    pheno.shape(),
                    (tape.shape(x).0, self.config.pheno_dim),
                ));
            }
            let pv = tape.constant(pheno);
            let f = self.fusion.forward(tape, &p.fusion, node, pv)?;
            (f.out, Some(f.out), f.gate)
        };
        let z = tape.matmul(head, p.cls_weight)?;
        let logits = tape.add_row(z, p.cls_bias)?;
        Ok(PopulationPass {
            logits,
            node,
            fused,
            gate,
        })
    }

    /// Class-1 probability of every subject.
    pub fn predict(&self, store: &ParamStore, features: &Tensor, adjacencies: &[Arc<RowSparse>], pheno: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, store, features, adjacencies, pheno)?;
        let logits = tape.value(pass.logits);
        Ok((0..logits.rows())
            .map(|i| crate::autodiff::sigmoid(logits.get(i, 1) - logits.get(i, 0)))
            .collect())
    }
}
