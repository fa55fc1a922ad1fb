//! Two-stage graph learning for connectivity-based disorder classification.
//!
//! Stage one learns a representation of each subject's brain graph with
//! weighted graph attention and learned node regrouping. Stage two places
//! every subject in a population graph whose edges join similar subjects
//! from *different* site/demographic categories, runs a heterogeneous graph
//! convolution over those relations and fuses phenotype features through a
//! learned gate.
//!
//! All model math runs on the small reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod brain;
pub mod data;
pub mod error;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod population;
pub mod rng;
pub mod semantic;
pub mod tensor;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;

pub use autodiff::{Tape, Unary, Var};
pub use error::{Error, ErrorKind, Result};
pub use optim::{Adam, AdamConfig};
pub use rng::SeededRng;
pub use semantic::{RegionEmbedding, SemanticEdgeSet, WeightedEdges};
pub use tensor::{ParamId, ParamStore, RowSparse, Tensor};
