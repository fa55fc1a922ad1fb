use log::debug;
use rayon::prelude::*;

use crate::autodiff::{sigmoid, Tape};
use crate::brain::{AnrGat, AnrGatConfig, BrainGraph};
use crate::error::{Error, Result};
use crate::losses::{stage1_loss, LossBreakdown};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{ParamStore, Tensor};
use crate::SeededRng;

use super::config::Stage1Config;

/// A trained brain-graph model and its readout for every subject.
#[derive(Clone, Debug)]
pub struct Stage1Outcome {
    pub model: AnrGat,
    pub store: ParamStore,
    /// `n × 2F″` pooled embeddings, one row per input subject.
    pub embeddings: Tensor,
    /// Class-1 probability per subject.
    pub scores: Vec<f64>,
    /// Mean batch loss per epoch.
    pub history: Vec<LossBreakdown>,
}

pub fn build_stage1_model(region_dim: usize, cfg: &Stage1Config, rng: &mut SeededRng) -> Result<(AnrGat, ParamStore)> {
    let mut store = ParamStore::new();
    let config = AnrGatConfig {
        in_dim: region_dim,
        hidden1: cfg.hidden,
        hidden2: cfg.hidden,
        n_groups: cfg.n_groups,
        regroup: cfg.regroup,
        ..Default::default()
    };
    let model = AnrGat::new(config, &mut store, rng)?;
    Ok((model, store))
}

/// Mini-batch Adam on the stage-one loss over `train`, then readout of all
/// subjects.
pub fn train_stage1(brains: &[BrainGraph], train: &[usize], cfg: &Stage1Config, seed: u64) -> Result<Stage1Outcome> {
    let region_dim = brains
        .first()
        .ok_or_else(|| Error::Data("no subjects".into()))?
        .features
        .cols();
    if let Some(b) = brains.iter().find(|b| b.features.cols() != region_dim) {
        return Err(Error::Data(format!("subject {} has a different feature width", b.subject_id)));
    }
    let mut rng = SeededRng::new(seed);
    let (model, mut store) = build_stage1_model(region_dim, cfg, &mut rng.derive(0))?;
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });
    let mut order = train.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sums = [0.0; 3];
        let mut batches = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, &store)?;
            let mut logits = Vec::with_capacity(batch.len());
            let mut embeds = Vec::with_capacity(batch.len());
            for &i in batch {
                let pass = model.forward(&mut tape, &bound, &brains[i])?;
                logits.push(pass.logits);
                embeds.push(pass.embedding);
            }
            let labels: Vec<usize> = batch.iter().map(|&i| brains[i].label).collect();
            let lv = tape.vconcat(&logits)?;
            let ev = tape.vconcat(&embeds)?;
            let loss = stage1_loss(&mut tape, lv, ev, &labels, cfg.loss)?;
            let b = loss.breakdown(&tape);
            if !b.total.is_finite() {
                return Err(Error::Numerical(format!("stage-one loss diverged at epoch {epoch}: {b:?}")));
            }
            sums[0] += b.total;
            sums[1] += b.cls;
            sums[2] += b.sim_node;
            batches += 1.0;
            tape.backward(loss.total)?;
            store.zero_grad();
            tape.accumulate_param_grads(&mut store)?;
            opt.step(&mut store);
        }
        if !store.all_finite() {
            return Err(Error::Numerical(format!("stage-one parameters non-finite after epoch {epoch}")));
        }
        let h = LossBreakdown {
            total: sums[0] / batches,
            cls: sums[1] / batches,
            sim_node: sums[2] / batches,
            sim_fusion: None,
        };
        debug!("stage1 epoch {epoch}: {h:?}");
        history.push(h);
    }

    let (embeddings, scores) = readout_all(&model, &store, brains)?;
    Ok(Stage1Outcome {
        model,
        store,
        embeddings,
        scores,
        history,
    })
}

/// Embeddings and class-1 probabilities for every subject.
pub fn readout_all(model: &AnrGat, store: &ParamStore, brains: &[BrainGraph]) -> Result<(Tensor, Vec<f64>)> {
    let outs = brains
        .par_iter()
        .map(|b| model.readout(store, b).map(|(r, _)| r))
        .collect::<Result<Vec<_>>>()?;
    let d = model.embedding_dim();
    let mut embeddings = Tensor::zeros(brains.len(), d);
    let mut scores = Vec::with_capacity(brains.len());
    for (i, r) in outs.into_iter().enumerate() {
        if r.embedding.iter().chain(&r.logits).any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite readout for subject {}", brains[i].subject_id)));
        }
        embeddings.row_mut(i).copy_from_slice(&r.embedding);
        scores.push(sigmoid(r.logits[1] - r.logits[0]));
    }
    Ok((embeddings, scores))
}
