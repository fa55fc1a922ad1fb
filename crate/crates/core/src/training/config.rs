use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::population::{Condition, EdgeMode, FusionMode, PhenotypeField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    /// Semantic-edge cosine threshold τ.
    pub threshold: f64,
    pub n_groups: usize,
    pub regroup: bool,
    pub loss: LossWeights,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            lr: 1e-4,
            weight_decay: 0.0,
            epochs: 200,
            batch_size: 32,
            hidden: 512,
            threshold: 0.6,
            n_groups: 60,
            regroup: true,
            loss: LossWeights::default(),
        }
    }
}

/// How the Gaussian-kernel bandwidth is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaPolicy {
    /// Median pairwise distance among training subjects.
    Median,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub top_k: usize,
    pub sigma: SigmaPolicy,
    pub conditions: Vec<Condition>,
    pub phenotypes: Vec<PhenotypeField>,
    pub fusion: FusionMode,
    pub edge_mode: EdgeMode,
    pub self_term: bool,
    pub loss: LossWeights,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            lr: 1e-2,
            weight_decay: 5e-5,
            epochs: 100,
            hidden: 128,
            top_k: 5,
            sigma: SigmaPolicy::Median,
            conditions: Condition::ALL.to_vec(),
            phenotypes: vec![
                PhenotypeField::Site,
                PhenotypeField::Gender,
                PhenotypeField::AgeGroup,
                PhenotypeField::Iq,
            ],
            fusion: FusionMode::Gated,
            edge_mode: EdgeMode::CrossCategory,
            self_term: true,
            loss: LossWeights::default(),
        }
    }
}

/// Everything that affects training numerics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub folds: usize,
    /// Train a fresh stage-one model on each fold's training subjects.
    /// When false, one model trained on all subjects feeds every fold.
    pub refit_stage1_per_fold: bool,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            repetitions: 5,
            folds: 10,
            refit_stage1_per_fold: true,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be at least 1")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        at_least_one("repetitions", self.repetitions)?;
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        let s1 = &self.stage1;
        positive("stage1.lr", s1.lr)?;
        at_least_one("stage1.batch_size", s1.batch_size)?;
        at_least_one("stage1.hidden", s1.hidden)?;
        at_least_one("stage1.n_groups", s1.n_groups)?;
        if !(-1.0..=1.0).contains(&s1.threshold) {
            return Err(Error::Config(format!("stage1.threshold must lie in [-1, 1], got {}", s1.threshold)));
        }
        let s2 = &self.stage2;
        positive("stage2.lr", s2.lr)?;
        at_least_one("stage2.hidden", s2.hidden)?;
        at_least_one("stage2.top_k", s2.top_k)?;
        if let SigmaPolicy::Fixed(s) = s2.sigma {
            positive("stage2.sigma", s)?;
        }
        if s2.edge_mode != EdgeMode::SimilarityOnly && s2.conditions.is_empty() {
            return Err(Error::Config("stage2.conditions is empty but edge_mode needs conditions".into()));
        }
        if s2.fusion != FusionMode::None && s2.phenotypes.is_empty() {
            return Err(Error::Config("stage2.fusion is enabled but stage2.phenotypes is empty".into()));
        }
        for w in [s1.loss, s2.loss] {
            for v in [w.cls, w.sim_node, w.sim_fusion] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config("loss weights must be finite and ≥ 0".into()));
                }
            }
        }
        Ok(())
    }
}
