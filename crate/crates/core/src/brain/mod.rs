//! Stage one: brain-graph representation learning.
//!
//! A subject's brain graph has one node per atlas region, connectivity rows
//! as node features and the shared semantic edge set. The model runs a
//! weighted attention layer, regroups nodes by a learned soft assignment
//! hardened with argmax, runs a second attention layer over the coarsened
//! graph and pools to a fixed-width embedding.

mod explain;
mod groups;
mod model;
mod wgat;

use std::sync::Arc;

use crate::semantic::SemanticEdgeSet;
use crate::tensor::Tensor;

pub use explain::{coassignment_frequency, grad_cam, gradcam_node_importance, top_coassigned_pairs, top_nodes};
pub use groups::{assign_groups, group_assignment_ratio, regroup, GroupMapper, GroupedGraph};
pub use model::{AnrGat, AnrGatConfig, BoundAnrGat, BrainPass, BrainReadout};
pub use wgat::{BoundWgat, WgatLayer, WgatOutput};

/// One subject's brain graph.
#[derive(Clone, Debug, PartialEq)]
pub struct BrainGraph {
    pub subject_id: String,
    pub label: usize,
    /// `R × F` node features, by default Pearson connectivity rows.
    pub features: Tensor,
    pub edges: Arc<SemanticEdgeSet>,
}

impl BrainGraph {
    pub fn region_count(&self) -> usize {
        self.features.rows()
    }
}

pub(crate) fn glorot(rng: &mut crate::SeededRng, fan_in: usize, fan_out: usize, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(rows, cols, data).expect("shape matches")
}
