//! Artifact-producing stages behind the command-line tool.
//!
//! Every run lives in `<out>/<config hash>/`. Each stage writes its
//! artifacts atomically and is skipped when they already exist, so an
//! interrupted run resumes from the last completed stage.

mod ablate;
mod config;

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::brain::{coassignment_frequency, gradcam_node_importance, top_coassigned_pairs, top_nodes, AnrGat};
use crate::data::{generate_cohort, ingest, write_atomic, write_dataset, Dataset, IngestOptions};
use crate::error::{Error, Result};
use crate::population::{write_edge_dump, PopulationModel};
use crate::tensor::{ParamStore, Tensor};
use crate::training::{
    cross_validate, readout_all, train_stage1, train_stage2, CvOutcome, FoldStats, MeanStd, MetricsReport,
    Stage2Variant,
};
use crate::rng::derive_seed;

pub use ablate::{expand_grid, run_ablation, AblationCell, AblationRow};
pub use config::{load_config, AblationGrid, DataConfig, ExplainConfig, PipelineConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage1Checkpoint {
    pub model: AnrGat,
    pub store: ParamStore,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage2Checkpoint {
    pub model: PopulationModel,
    pub store: ParamStore,
    pub stats: FoldStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistances {
    pub stage1: MeanStd,
    pub stage2: MeanStd,
}

/// Contents of `metrics.json`. Holds no timestamps, so equal configs give
/// equal bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub config_hash: String,
    pub config: PipelineConfig,
    pub stage1: MetricsReport,
    pub stage2: MetricsReport,
    pub class_distance: ClassDistances,
}

/// Paths of one run's artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub config: PipelineConfig,
}

impl RunDir {
    /// `<out>/<hash>`; writes the resolved configuration on creation.
    pub fn create(out: &Path, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let root = out.join(config.hash());
        fs::create_dir_all(&root)?;
        let text = toml::to_string(&config).map_err(|e| Error::Config(e.to_string()))?;
        write_atomic(&root.join("config.toml"), text.as_bytes())?;
        Ok(RunDir { root, config })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn semantic_edges(&self) -> PathBuf {
        self.root.join("graphs").join("semantic_edges.csv")
    }
    pub fn stage1_checkpoint(&self) -> PathBuf {
        self.root.join("stage1").join("checkpoint.json")
    }
    pub fn stage1_embeddings(&self) -> PathBuf {
        self.root.join("stage1").join("embeddings.csv")
    }
    pub fn cv(&self) -> PathBuf {
        self.root.join("stage2").join("cv.json")
    }
    pub fn stage2_checkpoint(&self) -> PathBuf {
        self.root.join("stage2").join("checkpoint.json")
    }
    pub fn population_edges(&self) -> PathBuf {
        self.root.join("stage2").join("edges.csv")
    }
    pub fn metrics_json(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn importance(&self) -> PathBuf {
        self.root.join("explain").join("importance.csv")
    }
    pub fn coassignment(&self) -> PathBuf {
        self.root.join("explain").join("coassignment.csv")
    }
    pub fn ablation_csv(&self) -> PathBuf {
        self.root.join("ablate").join("ablation.csv")
    }
    pub fn ablation_json(&self) -> PathBuf {
        self.root.join("ablate").join("ablation.json")
    }

    /// Writes the synthetic cohort into `data/`. Fails for manifest sources.
    pub fn gen_data(&self) -> Result<()> {
        let spec = self
            .config
            .data
            .synthetic
            .as_ref()
            .ok_or_else(|| Error::Config("gen-data needs data.synthetic".into()))?;
        if self.data_dir().join("manifest.csv").exists() {
            info!("data already generated in {}", self.data_dir().display());
            return Ok(());
        }
        let dataset = generate_cohort(spec)?;
        write_dataset(&dataset, &self.data_dir())?;
        info!("wrote {} subjects to {}", dataset.len(), self.data_dir().display());
        Ok(())
    }

    /// Loads the run's dataset with semantic edges at the stage-one threshold.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let mut options = IngestOptions {
            threshold: self.config.stage1.threshold,
            ..self.config.data.ingest.clone()
        };
        let manifest = if self.config.data.synthetic.is_some() {
            self.gen_data()?;
            options.phenotypes = None;
            options.embeddings = None;
            self.data_dir().join("manifest.csv")
        } else {
            self.config.data.manifest.clone().expect("validated")
        };
        let (dataset, report) = ingest(&manifest, &options)?;
        for (id, why) in &report.rejected {
            info!("rejected subject {id}: {why}");
        }
        Ok(dataset)
    }

    pub fn build_graphs(&self) -> Result<()> {
        if self.semantic_edges().exists() {
            return Ok(());
        }
        let dataset = self.load_dataset()?;
        let edges = &dataset.brains[0].edges;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["src", "dst", "weight"])?;
        for &(u, v, s) in edges.edges() {
            w.write_record([u.to_string(), v.to_string(), s.to_string()])?;
        }
        write_atomic(&self.semantic_edges(), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        let isolated = edges.graph.isolated_nodes();
        let summary = serde_json::json!({
            "threshold": edges.threshold,
            "regions": edges.region_count(),
            "edges": edges.edges().len(),
            "isolated_nodes": isolated,
        });
        write_atomic(
            &self.root.join("graphs").join("summary.json"),
            serde_json::to_string_pretty(&summary)?.as_bytes(),
        )?;
        Ok(())
    }

    /// Final stage-one model on every subject, plus embeddings for all.
    pub fn train_stage1(&self) -> Result<()> {
        if self.stage1_checkpoint().exists() && self.stage1_embeddings().exists() {
            return Ok(());
        }
        self.build_graphs()?;
        let dataset = self.load_dataset()?;
        let all: Vec<usize> = (0..dataset.len()).collect();
        let out = train_stage1(&dataset.brains, &all, &self.config.stage1, derive_seed(self.config.seed, 0x5_4a4e))?;
        write_json(
            &self.stage1_checkpoint(),
            &Stage1Checkpoint {
                model: out.model,
                store: out.store,
            },
        )?;
        write_embeddings_csv(&self.stage1_embeddings(), &dataset, &out.embeddings)?;
        Ok(())
    }

    pub fn load_stage1(&self) -> Result<Stage1Checkpoint> {
        read_json(&self.stage1_checkpoint())
    }

    /// Cross-validated metrics for both stages plus a final stage-two model
    /// over the stage-one embeddings of every subject.
    pub fn train_stage2(&self) -> Result<()> {
        if self.cv().exists() && self.stage2_checkpoint().exists() {
            return Ok(());
        }
        self.train_stage1()?;
        let dataset = self.load_dataset()?;
        if !self.cv().exists() {
            let variant = Stage2Variant {
                name: "stage2".into(),
                config: self.config.stage2.clone(),
            };
            let cv = cross_validate(&dataset, &self.config.run_config(), &[variant])?;
            write_json(&self.cv(), &cv)?;
        }
        let ckpt = self.load_stage1()?;
        let (embeddings, _) = readout_all(&ckpt.model, &ckpt.store, &dataset.brains)?;
        let all: Vec<usize> = (0..dataset.len()).collect();
        let out = train_stage2(
            &embeddings,
            &dataset.phenotypes,
            &dataset.labels(),
            &all,
            &self.config.stage2,
            derive_seed(self.config.seed, 0x5_4a4f),
        )?;
        let mut dump = Vec::new();
        write_edge_dump(&mut dump, &out.relations)?;
        write_atomic(&self.population_edges(), &dump)?;
        write_json(
            &self.stage2_checkpoint(),
            &Stage2Checkpoint {
                model: out.model,
                store: out.store,
                stats: out.stats,
            },
        )?;
        Ok(())
    }

    /// Writes `metrics.json` and `metrics.csv` from the cross-validation record.
    pub fn evaluate(&self) -> Result<MetricsDocument> {
        self.train_stage2()?;
        let cv: CvOutcome = read_json(&self.cv())?;
        let doc = metrics_document(&self.config, &cv)?;
        write_json(&self.metrics_json(), &doc)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stage", "metric", "mean", "std"])?;
        for (stage, r) in [("stage1", &doc.stage1), ("stage2", &doc.stage2)] {
            for (name, m) in [("acc", r.acc), ("auc", r.auc), ("spe", r.spe), ("sen", r.sen)] {
                w.write_record([stage, name, &m.mean.to_string(), &m.std.to_string()])?;
            }
        }
        write_atomic(&self.metrics_csv(), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        Ok(doc)
    }

    /// Grad-CAM node importance averaged over subjects and the most
    /// frequently co-assigned region pairs.
    pub fn explain(&self) -> Result<()> {
        self.train_stage1()?;
        let dataset = self.load_dataset()?;
        let ckpt = self.load_stage1()?;
        explain_to(&self.importance(), &self.coassignment(), &dataset, &ckpt, &self.config.explain)
    }

    pub fn run_all(&self) -> Result<MetricsDocument> {
        if self.config.data.synthetic.is_some() {
            self.gen_data()?;
        }
        self.build_graphs()?;
        self.train_stage1()?;
        self.train_stage2()?;
        let doc = self.evaluate()?;
        self.explain()?;
        Ok(doc)
    }

    pub fn ablate(&self) -> Result<Vec<AblationRow>> {
        let dataset = self.load_dataset()?;
        let rows = run_ablation(&dataset, &self.config)?;
        write_json(&self.ablation_json(), &rows)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rows {
            w.serialize(r.flat())?;
        }
        write_atomic(&self.ablation_csv(), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        Ok(rows)
    }
}

pub fn metrics_document(config: &PipelineConfig, cv: &CvOutcome) -> Result<MetricsDocument> {
    let (_, stage2) = cv
        .variants
        .first()
        .ok_or_else(|| Error::Data("cross-validation record has no stage-two results".into()))?;
    let cd1: Vec<f64> = cv.folds.iter().map(|f| f.stage1_class_distance).collect();
    let cd2: Vec<f64> = cv.folds.iter().map(|f| f.variants[0].class_distance).collect();
    Ok(MetricsDocument {
        config_hash: config.hash(),
        config: config.clone(),
        stage1: cv.stage1.clone(),
        stage2: stage2.clone(),
        class_distance: ClassDistances {
            stage1: MeanStd::of(&cd1),
            stage2: MeanStd::of(&cd2),
        },
    })
}

pub fn explain_to(
    importance_path: &Path,
    coassignment_path: &Path,
    dataset: &Dataset,
    ckpt: &Stage1Checkpoint,
    cfg: &ExplainConfig,
) -> Result<()> {
    let r = dataset.region_count();
    let mut mean = vec![0.0; r];
    let mut assignments = Vec::with_capacity(dataset.len());
    for b in &dataset.brains {
        let imp = gradcam_node_importance(&ckpt.model, &ckpt.store, b, cfg.target_class)?;
        mean.iter_mut().zip(&imp).for_each(|(m, v)| *m += v / dataset.len() as f64);
        let (_, assignment) = ckpt.model.readout(&ckpt.store, b)?;
        if !assignment.is_empty() {
            assignments.push(assignment);
        }
    }
    let names: Vec<String> = (0..r)
        .map(|i| {
            dataset
                .embeddings
                .get(i)
                .map(|e| e.region_name.clone())
                .unwrap_or_else(|| format!("region_{i}"))
        })
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["node_id", "region_name", "score", "rank"])?;
    let order = top_nodes(&mean, r);
    let mut rank = vec![0; r];
    for (k, &i) in order.iter().enumerate() {
        rank[i] = k + 1;
    }
    for i in 0..r {
        w.write_record([i.to_string(), names[i].clone(), mean[i].to_string(), rank[i].to_string()])?;
    }
    write_atomic(importance_path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["node_a", "node_b", "region_a", "region_b", "frequency"])?;
    if !assignments.is_empty() {
        let freq = coassignment_frequency(&assignments)?;
        for (u, v, f) in top_coassigned_pairs(&freq, cfg.top_pairs) {
            w.write_record([u.to_string(), v.to_string(), names[u].clone(), names[v].clone(), f.to_string()])?;
        }
    }
    write_atomic(coassignment_path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    Ok(())
}

fn write_embeddings_csv(path: &Path, dataset: &Dataset, emb: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["subject_id".to_string(), "label".to_string()];
    header.extend((0..emb.cols()).map(|k| format!("e{k}")));
    w.write_record(&header)?;
    for (i, b) in dataset.brains.iter().enumerate() {
        let mut row = vec![b.subject_id.clone(), b.label.to_string()];
        row.extend(emb.row(i).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&text)?)
}
