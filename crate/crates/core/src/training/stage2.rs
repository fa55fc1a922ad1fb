use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{stage2_loss, LossBreakdown};
use crate::optim::{Adam, AdamConfig};
use crate::population::{
    build_condition_edges, condition_categories, gaussian_affinity, median_pairwise_distance, normalized_adjacency,
    EdgeMode, FusionMode, PhenotypeEncoder, PhenotypeRecord, PopulationModel, PopulationModelConfig, Relation, ZScore,
};
use crate::tensor::{ParamStore, RowSparse, Tensor};
use crate::SeededRng;

use super::config::{SigmaPolicy, Stage2Config};

/// Every statistic stage two derives from the data. All of it is computed
/// from training subjects only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldStats {
    pub embedding_zscore: Vec<ZScore>,
    pub sigma_k: f64,
    pub encoder: PhenotypeEncoder,
}

impl FoldStats {
    pub fn fit(embeddings: &Tensor, phenotypes: &[PhenotypeRecord], train: &[usize], cfg: &Stage2Config) -> Result<Self> {
        let embedding_zscore: Vec<ZScore> = (0..embeddings.cols())
            .map(|c| ZScore::fit(&train.iter().map(|&i| embeddings.get(i, c)).collect::<Vec<_>>()))
            .collect();
        let z = standardize(embeddings, &embedding_zscore);
        let sigma_k = match cfg.sigma {
            SigmaPolicy::Median => median_pairwise_distance(&z, train)?,
            SigmaPolicy::Fixed(s) => s,
        };
        // All-identical training embeddings give a zero median.
        let sigma_k = if sigma_k > 0.0 { sigma_k } else { 1.0 };
        let encoder = PhenotypeEncoder::fit(phenotypes, train, &cfg.phenotypes)?;
        Ok(FoldStats {
            embedding_zscore,
            sigma_k,
            encoder,
        })
    }
}

fn standardize(x: &Tensor, stats: &[ZScore]) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (v, s) in out.row_mut(i).iter_mut().zip(stats) {
            *v = s.apply(*v);
        }
    }
    out
}

/// The population graph of one fold.
#[derive(Clone, Debug)]
pub struct PopulationInputs {
    pub features: Tensor,
    pub relations: Vec<Relation>,
    pub adjacencies: Vec<Arc<RowSparse>>,
    pub phenotypes: Tensor,
}

pub fn build_population(
    embeddings: &Tensor,
    phenotypes: &[PhenotypeRecord],
    stats: &FoldStats,
    cfg: &Stage2Config,
) -> Result<PopulationInputs> {
    let features = standardize(embeddings, &stats.embedding_zscore);
    let affinity = gaussian_affinity(&features, stats.sigma_k)?;
    let (names, cats) = if cfg.edge_mode == EdgeMode::SimilarityOnly {
        (Vec::new(), Vec::new())
    } else {
        (
            cfg.conditions.iter().map(|c| c.name().to_string()).collect(),
            condition_categories(phenotypes, &cfg.conditions, &stats.encoder),
        )
    };
    let relations = build_condition_edges(&affinity, &names, &cats, cfg.top_k, cfg.edge_mode)?;
    let adjacencies = relations
        .iter()
        .map(|r| normalized_adjacency(features.rows(), &r.edges))
        .collect();
    Ok(PopulationInputs {
        features,
        relations,
        adjacencies,
        phenotypes: stats.encoder.encode(phenotypes),
    })
}

#[derive(Clone, Debug)]
pub struct Stage2Outcome {
    pub model: PopulationModel,
    pub store: ParamStore,
    pub stats: FoldStats,
    pub relations: Vec<Relation>,
    /// Class-1 probability for every subject.
    pub scores: Vec<f64>,
    /// Classifier input (fused features, or HGCN output without fusion).
    pub representation: Tensor,
    /// Standardized stage-one embeddings the graph was built on.
    pub input_features: Tensor,
    pub history: Vec<LossBreakdown>,
}

/// Transductive full-graph training: every subject is a node, the loss only
/// sees `train`.
pub fn train_stage2(
    embeddings: &Tensor,
    phenotypes: &[PhenotypeRecord],
    labels: &[usize],
    train: &[usize],
    cfg: &Stage2Config,
    seed: u64,
) -> Result<Stage2Outcome> {
    let n = embeddings.rows();
    if phenotypes.len() != n || labels.len() != n {
        return Err(Error::Data(format!(
            "{n} embeddings, {} phenotype records, {} labels",
            phenotypes.len(),
            labels.len()
        )));
    }
    let stats = FoldStats::fit(embeddings, phenotypes, train, cfg)?;
    let inputs = build_population(embeddings, phenotypes, &stats, cfg)?;
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let model = PopulationModel::new(
        PopulationModelConfig {
            in_dim: embeddings.cols(),
            hidden: cfg.hidden,
            n_conditions: inputs.relations.len(),
            pheno_dim: inputs.phenotypes.cols(),
            fusion: cfg.fusion,
            self_term: cfg.self_term,
        },
        &mut store,
        &mut rng,
    )?;
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &store, &inputs.features, &inputs.adjacencies, &inputs.phenotypes)?;
        let logits = tape.gather_rows(pass.logits, train)?;
        let node = tape.gather_rows(pass.node, train)?;
        let fused = match pass.fused {
            Some(f) => Some(tape.gather_rows(f, train)?),
            None => None,
        };
        let loss = stage2_loss(&mut tape, logits, node, fused, &train_labels, cfg.loss)?;
        let b = loss.breakdown(&tape);
        if !b.total.is_finite() {
            return Err(Error::Numerical(format!("stage-two loss diverged at epoch {epoch}: {b:?}")));
        }
        debug!("stage2 epoch {epoch}: {b:?}");
        history.push(b);
        tape.backward(loss.total)?;
        store.zero_grad();
        tape.accumulate_param_grads(&mut store)?;
        opt.step(&mut store);
        if !store.all_finite() {
            return Err(Error::Numerical(format!("stage-two parameters non-finite after epoch {epoch}")));
        }
    }

    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &store, &inputs.features, &inputs.adjacencies, &inputs.phenotypes)?;
    let logits = tape.value(pass.logits);
    let scores = (0..n)
        .map(|i| crate::autodiff::sigmoid(logits.get(i, 1) - logits.get(i, 0)))
        .collect();
    let representation = tape.value(if model.config.fusion == FusionMode::None {
        pass.node
    } else {
        pass.fused.expect("fusion enabled")
    });
    Ok(Stage2Outcome {
        model,
        store,
        stats,
        relations: inputs.relations,
        scores,
        representation,
        input_features: inputs.features,
        history,
    })
}
