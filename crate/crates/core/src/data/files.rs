use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brain::BrainGraph;
use crate::error::{Error, Result};
use crate::population::{read_phenotypes, write_phenotypes};
use crate::semantic::{build_semantic_edges, load_embeddings, pearson_features, write_embeddings};
use crate::tensor::Tensor;

use super::synthetic::synthetic_region_embeddings;
use super::{Dataset, Provenance};

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Data(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Headerless CSV, one matrix row per line. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_matrix(path: &Path, m: &Tensor) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|x| x.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_matrix(path: &Path) -> Result<Tensor> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("{}: bad number {s:?}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    subject_id: String,
    label: Option<usize>,
    fc_path_or_ts_path: String,
    kind: String,
}

/// Writes `manifest.csv`, `fc/<subject>.csv`, `phenotypes.csv`,
/// `embeddings.csv` and, for synthetic data, `spec.json`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("fc"))?;
    dataset
        .brains
        .par_iter()
        .try_for_each(|b| write_matrix(&dir.join("fc").join(format!("{}.csv", b.subject_id)), &b.features))?;
    let mut m = csv::Writer::from_writer(Vec::new());
    for b in &dataset.brains {
        m.serialize(ManifestRow {
            subject_id: b.subject_id.clone(),
            label: Some(b.label),
            fc_path_or_ts_path: format!("fc/{}.csv", b.subject_id),
            kind: "fc".into(),
        })?;
    }
    write_atomic(&dir.join("manifest.csv"), &m.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    let mut p = Vec::new();
    write_phenotypes(&mut p, &dataset.phenotypes)?;
    write_atomic(&dir.join("phenotypes.csv"), &p)?;
    let mut e = Vec::new();
    write_embeddings(&mut e, &dataset.embeddings)?;
    write_atomic(&dir.join("embeddings.csv"), &e)?;
    if let Provenance::Synthetic(spec) = &dataset.provenance {
        write_atomic(&dir.join("spec.json"), serde_json::to_string_pretty(spec)?.as_bytes())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Defaults to `phenotypes.csv` next to the manifest.
    pub phenotypes: Option<PathBuf>,
    /// Defaults to `embeddings.csv` next to the manifest if present,
    /// otherwise mock embeddings.
    pub embeddings: Option<PathBuf>,
    pub threshold: f64,
    pub global_regression: bool,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            phenotypes: None,
            embeddings: None,
            threshold: 0.6,
            global_regression: false,
            embedding_dim: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    /// `(subject_id, reason)` for rows that were skipped.
    pub rejected: Vec<(String, String)>,
    /// Largest `|A − Aᵀ|` entry per connectivity file that needed symmetrizing.
    pub asymmetry: Vec<(String, f64)>,
}

/// Loads a manifest of `subject_id,label,fc_path_or_ts_path,kind` rows.
/// Relative paths resolve against the manifest's directory.
pub fn ingest(manifest: &Path, options: &IngestOptions) -> Result<(Dataset, IngestReport)> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut report = IngestReport::default();
    let mut rows = Vec::new();
    let mut rdr = csv::Reader::from_path(manifest)?;
    for (line, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("manifest row {}: {e}", line + 1)))?;
        if row.label.is_none() {
            warn!("manifest row {}: subject {} has no label, skipped", line + 1, row.subject_id);
            report.rejected.push((row.subject_id, "missing label".into()));
            continue;
        }
        if row.kind != "fc" && row.kind != "ts" {
            return Err(Error::Data(format!(
                "manifest row {}: kind must be fc or ts, got {:?}",
                line + 1,
                row.kind
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data("manifest has no usable rows".into()));
    }

    let loaded: Vec<Result<(Tensor, Option<f64>)>> = rows
        .par_iter()
        .map(|row| {
            let m = read_matrix(&base.join(&row.fc_path_or_ts_path))?;
            if row.kind == "ts" {
                return Ok((pearson_features(&m, options.global_regression)?, None));
            }
            symmetrize(m).map(|(m, a)| (m, Some(a)))
        })
        .collect();
    let mut features = Vec::with_capacity(rows.len());
    for (row, res) in rows.iter().zip(loaded) {
        let (m, asym) = res.map_err(|e| Error::Data(format!("subject {}: {e}", row.subject_id)))?;
        if let Some(a) = asym.filter(|&a| a > 0.0) {
            warn!("subject {}: connectivity asymmetric by up to {a:e}, symmetrized", row.subject_id);
            report.asymmetry.push((row.subject_id.clone(), a));
        }
        features.push(m);
    }
    let r = features[0].rows();
    let offenders: Vec<String> = rows
        .iter()
        .zip(&features)
        .filter(|(_, f)| f.rows() != r)
        .map(|(row, f)| format!("{} ({} regions)", row.subject_id, f.rows()))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::Data(format!(
            "region count differs from {r} ({}): {}",
            rows[0].subject_id,
            offenders.join(", ")
        )));
    }

    let pheno_path = options.phenotypes.clone().unwrap_or_else(|| base.join("phenotypes.csv"));
    let all_pheno = read_phenotypes(fs::File::open(&pheno_path)?)?;
    let mut phenotypes = Vec::with_capacity(rows.len());
    for row in &rows {
        let p = all_pheno
            .iter()
            .find(|p| p.subject_id == row.subject_id)
            .ok_or_else(|| Error::Data(format!("subject {} has no phenotype record", row.subject_id)))?;
        phenotypes.push(p.clone());
    }

    let emb_path = options.embeddings.clone().unwrap_or_else(|| base.join("embeddings.csv"));
    let embeddings = if emb_path.exists() {
        load_embeddings(&emb_path)?
    } else {
        warn!("no region embeddings at {}, using mock embeddings", emb_path.display());
        synthetic_region_embeddings(r, options.embedding_dim, options.seed)?
    };
    if embeddings.len() != r {
        return Err(Error::Data(format!(
            "{} region embeddings for {r} regions",
            embeddings.len()
        )));
    }
    let edges = Arc::new(build_semantic_edges(&embeddings, options.threshold)?);
    let brains = rows
        .iter()
        .zip(features)
        .map(|(row, f)| BrainGraph {
            subject_id: row.subject_id.clone(),
            label: row.label.expect("filtered"),
            features: f,
            edges: Arc::clone(&edges),
        })
        .collect();
    let provenance = Provenance::Ingested {
        manifest: manifest.display().to_string(),
    };
    Ok((Dataset::new(brains, phenotypes, embeddings, provenance)?, report))
}

/// `(A + Aᵀ)/2` with the diagonal set to 1; returns the largest asymmetry.
fn symmetrize(m: Tensor) -> Result<(Tensor, f64)> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Data(format!("connectivity matrix is {}x{}", n, m.cols())));
    }
    let mut out = m.clone();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        out.set(i, i, 1.0);
        for j in i + 1..n {
            let (a, b) = (m.get(i, j), m.get(j, i));
            worst = worst.max((a - b).abs());
            if a != b {
                let s = 0.5 * (a + b);
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
    }
    Ok((out, worst))
}
