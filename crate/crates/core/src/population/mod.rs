//! Stage two: population graph over subjects.
//!
//! Subjects are nodes carrying their stage-one embeddings. For every
//! condition (site, gender, age group) each subject links to its most
//! similar subjects under a Gaussian kernel, restricted by default to
//! subjects in a *different* category of that condition. A heterogeneous
//! graph convolution averages one transform per condition, and a gated
//! fusion blends in encoded phenotypes before classification.

mod affinity;
mod edges;
mod fusion;
mod hgcn;
mod model;
mod phenotype;

pub use affinity::{class_distance, gaussian_affinity, median_pairwise_distance};
pub use edges::{build_condition_edges, write_edge_dump, EdgeMode, Relation};
pub use fusion::{BoundFusion, FusionLayer, FusionMode, FusionOutput};
pub use hgcn::{normalized_adjacency, BoundHgcn, HgcnLayer};
pub use model::{PopulationModel, PopulationModelConfig, PopulationPass};
pub use phenotype::{
    condition_categories, read_phenotypes, write_phenotypes, Condition, PhenotypeEncoder, PhenotypeField,
    PhenotypeRecord, ZScore, AGE_GROUPS,
};

use std::sync::Arc;

use crate::tensor::{RowSparse, Tensor};

/// Subjects, their features and one edge set per relation.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationGraph {
    pub features: Tensor,
    pub relations: Vec<Relation>,
}

impl PopulationGraph {
    pub fn n_subjects(&self) -> usize {
        self.features.rows()
    }

    /// Row-normalized adjacency of every relation, in relation order.
    pub fn adjacencies(&self) -> Vec<Arc<RowSparse>> {
        self.relations
            .iter()
            .map(|r| normalized_adjacency(self.n_subjects(), &r.edges))
            .collect()
    }
}
