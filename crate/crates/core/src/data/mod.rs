//! Cohort datasets: synthetic confounded cohorts and file ingestion.

mod files;
mod synthetic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::brain::BrainGraph;
use crate::error::{Error, Result};
use crate::population::PhenotypeRecord;
use crate::semantic::{build_semantic_edges, RegionEmbedding};

pub use files::{ingest, read_matrix, write_atomic, write_dataset, write_matrix, IngestOptions, IngestReport};
pub use synthetic::{generate_cohort, synthetic_region_embeddings, Blocks, SyntheticCohortSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ingested { manifest: String },
    Synthetic(SyntheticCohortSpec),
}

/// Brain graphs and phenotypes aligned by position and subject id.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub brains: Vec<BrainGraph>,
    pub phenotypes: Vec<PhenotypeRecord>,
    pub embeddings: Vec<RegionEmbedding>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        brains: Vec<BrainGraph>,
        phenotypes: Vec<PhenotypeRecord>,
        embeddings: Vec<RegionEmbedding>,
        provenance: Provenance,
    ) -> Result<Self> {
        if brains.len() != phenotypes.len() {
            return Err(Error::Data(format!(
                "{} brain graphs but {} phenotype records",
                brains.len(),
                phenotypes.len()
            )));
        }
        for (b, p) in brains.iter().zip(&phenotypes) {
            if b.subject_id != p.subject_id {
                return Err(Error::Data(format!(
                    "subject order mismatch: {} vs {}",
                    b.subject_id, p.subject_id
                )));
            }
        }
        Ok(Dataset {
            brains,
            phenotypes,
            embeddings,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.brains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.brains.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.brains.iter().map(|b| b.label).collect()
    }

    pub fn region_count(&self) -> usize {
        self.brains.first().map(|b| b.region_count()).unwrap_or(0)
    }

    /// Rebuilds the shared semantic edge set at a new threshold.
    pub fn rebuild_edges(&mut self, threshold: f64) -> Result<()> {
        let edges = Arc::new(build_semantic_edges(&self.embeddings, threshold)?);
        for b in &mut self.brains {
            b.edges = Arc::clone(&edges);
        }
        Ok(())
    }
}
