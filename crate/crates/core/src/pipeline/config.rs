use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{IngestOptions, SyntheticCohortSpec};
use crate::error::{Error, Result};
use crate::population::{Condition, EdgeMode, FusionMode, PhenotypeField};
use crate::training::{RunConfig, Stage1Config, Stage2Config};

/// Where subjects come from: a generated cohort or a manifest on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synthetic: Option<SyntheticCohortSpec>,
    pub manifest: Option<PathBuf>,
    pub ingest: IngestOptions,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: Some(SyntheticCohortSpec::default()),
            manifest: None,
            ingest: IngestOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub target_class: usize,
    /// Rows written to the co-assignment CSV.
    pub top_pairs: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            target_class: 1,
            top_pairs: 50,
        }
    }
}

/// Factorial ablation axes. An empty axis keeps the base configuration's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub edge_modes: Vec<EdgeMode>,
    pub condition_sets: Vec<Vec<Condition>>,
    pub fusion_modes: Vec<FusionMode>,
    pub phenotype_sets: Vec<Vec<PhenotypeField>>,
    pub thresholds: Vec<f64>,
    pub n_groups: Vec<usize>,
    /// Whether the similarity terms of both losses are active.
    pub similarity_loss: Vec<bool>,
}

/// The whole configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub folds: usize,
    pub refit_stage1_per_fold: bool,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub data: DataConfig,
    pub explain: ExplainConfig,
    pub ablate: AblationGrid,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let run = RunConfig::default();
        PipelineConfig {
            seed: run.seed,
            repetitions: run.repetitions,
            folds: run.folds,
            refit_stage1_per_fold: run.refit_stage1_per_fold,
            stage1: run.stage1,
            stage2: run.stage2,
            data: DataConfig::default(),
            explain: ExplainConfig::default(),
            ablate: AblationGrid::default(),
        }
    }
}

impl PipelineConfig {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            repetitions: self.repetitions,
            folds: self.folds,
            refit_stage1_per_fold: self.refit_stage1_per_fold,
            stage1: self.stage1.clone(),
            stage2: self.stage2.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.run_config().validate()?;
        match (&self.data.synthetic, &self.data.manifest) {
            (Some(spec), None) => spec.validate()?,
            (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "exactly one of data.synthetic and data.manifest must be set".into(),
                ))
            }
        }
        if self.explain.target_class > 1 {
            return Err(Error::Config("explain.target_class must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, truncated to 16 characters.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to
/// a bare string.
fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} has an empty segment")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for (depth, seg) in parents.iter().enumerate() {
        let entry = cur
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("{} is not a table", path[..=depth].join(".")))
        })?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Reads the TOML file (or starts from defaults), applies dotted-path
/// overrides and validates.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for raw in overrides {
        let (path, value) = parse_override(raw)?;
        set_path(&mut table, &path, value)?;
    }
    // A manifest replaces the default synthetic cohort unless both are given.
    let data = table.get("data").and_then(toml::Value::as_table);
    let manifest_only = data.is_some_and(|d| d.contains_key("manifest") && !d.contains_key("synthetic"));
    let mut cfg: PipelineConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if manifest_only {
        cfg.data.synthetic = None;
    }
    cfg.validate()?;
    Ok(cfg)
}
