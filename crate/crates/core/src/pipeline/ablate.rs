use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::population::{Condition, EdgeMode, FusionMode, PhenotypeField};
use crate::training::{cross_validate, MetricsReport, Stage2Variant};

use super::PipelineConfig;

/// One point of the factorial grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub threshold: f64,
    pub n_groups: usize,
    pub similarity_loss: bool,
    pub edge_mode: EdgeMode,
    pub conditions: Vec<Condition>,
    pub fusion: FusionMode,
    pub phenotypes: Vec<PhenotypeField>,
}

impl AblationCell {
    fn variant_name(&self) -> String {
        format!(
            "{:?}/{}/{:?}/{}",
            self.edge_mode,
            join(&self.conditions),
            self.fusion,
            join(&self.phenotypes)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub stage1: MetricsReport,
    pub stage2: MetricsReport,
}

/// Flat CSV form of [`AblationRow`].
#[derive(Clone, Debug, Serialize)]
pub struct AblationCsvRow {
    pub threshold: f64,
    pub n_groups: usize,
    pub similarity_loss: bool,
    pub edge_mode: String,
    pub conditions: String,
    pub fusion: String,
    pub phenotypes: String,
    pub stage1_acc: f64,
    pub stage1_auc: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub spe_mean: f64,
    pub sen_mean: f64,
}

impl AblationRow {
    pub fn flat(&self) -> AblationCsvRow {
        let c = &self.cell;
        AblationCsvRow {
            threshold: c.threshold,
            n_groups: c.n_groups,
            similarity_loss: c.similarity_loss,
            edge_mode: format!("{:?}", c.edge_mode),
            conditions: join(&c.conditions),
            fusion: format!("{:?}", c.fusion),
            phenotypes: join(&c.phenotypes),
            stage1_acc: self.stage1.acc.mean,
            stage1_auc: self.stage1.auc.mean,
            acc_mean: self.stage2.acc.mean,
            acc_std: self.stage2.acc.std,
            auc_mean: self.stage2.auc.mean,
            auc_std: self.stage2.auc.std,
            spe_mean: self.stage2.spe.mean,
            sen_mean: self.stage2.sen.mean,
        }
    }
}

fn join<T: std::fmt::Debug>(items: &[T]) -> String {
    items.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join("+")
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// All cells of the grid; stage-one axes vary slowest.
pub fn expand_grid(cfg: &PipelineConfig) -> Vec<AblationCell> {
    let g = &cfg.ablate;
    let sim_on = cfg.stage2.loss.sim_node != 0.0 || cfg.stage2.loss.sim_fusion != 0.0;
    let mut cells = Vec::new();
    for threshold in axis(&g.thresholds, cfg.stage1.threshold) {
        for n_groups in axis(&g.n_groups, cfg.stage1.n_groups) {
            for similarity_loss in axis(&g.similarity_loss, sim_on) {
                for edge_mode in axis(&g.edge_modes, cfg.stage2.edge_mode) {
                    for conditions in axis(&g.condition_sets, cfg.stage2.conditions.clone()) {
                        for fusion in axis(&g.fusion_modes, cfg.stage2.fusion) {
                            for phenotypes in axis(&g.phenotype_sets, cfg.stage2.phenotypes.clone()) {
                                cells.push(AblationCell {
                                    threshold,
                                    n_groups,
                                    similarity_loss,
                                    edge_mode,
                                    conditions: conditions.clone(),
                                    fusion,
                                    phenotypes,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    cells
}

/// Runs the grid. Cells sharing stage-one settings share one
/// cross-validation pass, so their stage-two variants see the same folds
/// and the same stage-one embeddings.
pub fn run_ablation(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let cells = expand_grid(cfg);
    let mut groups: Vec<(f64, usize, bool, Vec<AblationCell>)> = Vec::new();
    for c in cells {
        match groups
            .iter_mut()
            .find(|(t, n, s, _)| *t == c.threshold && *n == c.n_groups && *s == c.similarity_loss)
        {
            Some(g) => g.3.push(c),
            None => groups.push((c.threshold, c.n_groups, c.similarity_loss, vec![c])),
        }
    }
    let results: Vec<Result<Vec<AblationRow>>> = groups
        .par_iter()
        .map(|(threshold, n_groups, sim, cells)| {
            let mut run = cfg.run_config();
            run.stage1.threshold = *threshold;
            run.stage1.n_groups = *n_groups;
            if !sim {
                run.stage1.loss.sim_node = 0.0;
                run.stage1.loss.sim_fusion = 0.0;
            }
            let variants: Vec<Stage2Variant> = cells
                .iter()
                .map(|c| {
                    let mut s2 = run.stage2.clone();
                    s2.edge_mode = c.edge_mode;
                    s2.conditions = c.conditions.clone();
                    s2.fusion = c.fusion;
                    s2.phenotypes = c.phenotypes.clone();
                    if !sim {
                        s2.loss.sim_node = 0.0;
                        s2.loss.sim_fusion = 0.0;
                    }
                    Stage2Variant {
                        name: c.variant_name(),
                        config: s2,
                    }
                })
                .collect();
            let cv = cross_validate(dataset, &run, &variants)?;
            Ok(cells
                .iter()
                .zip(&cv.variants)
                .map(|(c, (_, report))| AblationRow {
                    cell: c.clone(),
                    stage1: cv.stage1.clone(),
                    stage2: report.clone(),
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}
