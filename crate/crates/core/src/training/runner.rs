use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::population::class_distance;
use crate::rng::derive_seed;
use crate::semantic::build_semantic_edges;

use super::config::{RunConfig, Stage2Config};
use super::cv::stratified_kfold;
use super::metrics::{compute_metrics, FoldMetrics, FoldRecord, MetricsReport};
use super::stage1::{train_stage1, Stage1Outcome};
use super::stage2::{train_stage2, FoldStats};

/// A named stage-two configuration evaluated on shared stage-one embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Variant {
    pub name: String,
    pub config: Stage2Config,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantFold {
    pub name: String,
    pub metrics: FoldMetrics,
    /// Between-class distance of the classifier input on test subjects.
    pub class_distance: f64,
    pub stats: FoldStats,
    pub edges: usize,
    /// Fraction of population edges joining subjects with equal labels.
    pub homophily: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub repetition: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub stage1: FoldMetrics,
    /// Between-class distance of the standardized stage-one embeddings on
    /// test subjects.
    pub stage1_class_distance: f64,
    pub variants: Vec<VariantFold>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub stage1: MetricsReport,
    pub variants: Vec<(String, MetricsReport)>,
    pub folds: Vec<FoldOutcome>,
}

impl CvOutcome {
    pub fn variant(&self, name: &str) -> Option<&MetricsReport> {
        self.variants.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }
}

/// Seed of the split for one repetition.
pub fn split_seed(seed: u64, repetition: usize) -> u64 {
    derive_seed(derive_seed(seed, 0x5_0117), repetition as u64)
}

/// Seed of one fold's training runs; stage one uses `derive_seed(fold_seed, 1)`
/// and stage-two variant `k` uses `derive_seed(fold_seed, 2 + k)`.
pub fn fold_seed(seed: u64, repetition: usize, fold: usize) -> u64 {
    derive_seed(derive_seed(seed, repetition as u64), fold as u64)
}

/// Repeated stratified k-fold over the dataset. Each fold trains stage one
/// (unless shared) and every stage-two variant on the same embeddings.
pub fn cross_validate(dataset: &Dataset, cfg: &RunConfig, variants: &[Stage2Variant]) -> Result<CvOutcome> {
    cfg.validate()?;
    let labels = dataset.labels();
    let brains = if dataset.brains.first().map(|b| b.edges.threshold) == Some(cfg.stage1.threshold) {
        dataset.brains.clone()
    } else {
        let edges = Arc::new(build_semantic_edges(&dataset.embeddings, cfg.stage1.threshold)?);
        let mut b = dataset.brains.clone();
        b.iter_mut().for_each(|g| g.edges = Arc::clone(&edges));
        b
    };

    let mut jobs = Vec::new();
    for rep in 0..cfg.repetitions {
        for (fold, (train, test)) in stratified_kfold(&labels, cfg.folds, split_seed(cfg.seed, rep))?
            .into_iter()
            .enumerate()
        {
            jobs.push((rep, fold, train, test));
        }
    }
    let shared: Option<Stage1Outcome> = if cfg.refit_stage1_per_fold {
        None
    } else {
        let all: Vec<usize> = (0..labels.len()).collect();
        Some(train_stage1(&brains, &all, &cfg.stage1, derive_seed(cfg.seed, 0x5_4a4e))?)
    };

    let folds = jobs
        .into_par_iter()
        .map(|(rep, fold, train, test)| {
            let seed = fold_seed(cfg.seed, rep, fold);
            let s1_owned;
            let s1 = match &shared {
                Some(s) => s,
                None => {
                    s1_owned = train_stage1(&brains, &train, &cfg.stage1, derive_seed(seed, 1))?;
                    &s1_owned
                }
            };
            let test_labels: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            let test_scores: Vec<f64> = test.iter().map(|&i| s1.scores[i]).collect();
            let stage1 = compute_metrics(&test_scores, &test_labels)?;
            let mut stage1_class_distance = f64::NAN;
            let mut vf = Vec::with_capacity(variants.len());
            for (k, v) in variants.iter().enumerate() {
                let out = train_stage2(
                    &s1.embeddings,
                    &dataset.phenotypes,
                    &labels,
                    &train,
                    &v.config,
                    derive_seed(seed, 2 + k as u64),
                )?;
                if k == 0 {
                    stage1_class_distance = class_distance(&out.input_features.select_rows(&test), &test_labels)?;
                }
                let scores: Vec<f64> = test.iter().map(|&i| out.scores[i]).collect();
                let (same, total) = out.relations.iter().flat_map(|r| &r.edges).fold((0, 0), |(s, t), e| {
                    (s + usize::from(labels[e.0] == labels[e.1]), t + 1)
                });
                vf.push(VariantFold {
                    name: v.name.clone(),
                    metrics: compute_metrics(&scores, &test_labels)?,
                    class_distance: class_distance(&out.representation.select_rows(&test), &test_labels)?,
                    stats: out.stats,
                    edges: total,
                    homophily: if total > 0 { same as f64 / total as f64 } else { f64::NAN },
                });
            }
            info!(
                "rep {rep} fold {fold}: stage1 acc {:.3}{}",
                stage1.acc,
                vf.iter().map(|v| format!(", {} acc {:.3}", v.name, v.metrics.acc)).collect::<String>()
            );
            Ok(FoldOutcome {
                repetition: rep,
                fold,
                train,
                test,
                stage1,
                stage1_class_distance,
                variants: vf,
            })
        })
        .collect::<Result<Vec<FoldOutcome>>>()?;

    let record = |f: &FoldOutcome, m: FoldMetrics| FoldRecord {
        repetition: f.repetition,
        fold: f.fold,
        metrics: m,
    };
    let stage1 = MetricsReport::from_folds(folds.iter().map(|f| record(f, f.stage1)).collect());
    let variants = variants
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let recs = folds.iter().map(|f| record(f, f.variants[k].metrics)).collect();
            (v.name.clone(), MetricsReport::from_folds(recs))
        })
        .collect();
    Ok(CvOutcome {
        stage1,
        variants,
        folds,
    })
}
