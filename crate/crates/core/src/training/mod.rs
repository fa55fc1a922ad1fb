//! Two-stage training, repeated stratified cross-validation and metrics.

mod config;
mod cv;
mod metrics;
mod runner;
mod stage1;
mod stage2;

pub use config::{RunConfig, SigmaPolicy, Stage1Config, Stage2Config};
pub use cv::{stratified_kfold, Split};
pub use metrics::{compute_metrics, FoldMetrics, FoldRecord, MeanStd, MetricsReport};
pub use runner::{cross_validate, fold_seed, split_seed, CvOutcome, FoldOutcome, Stage2Variant, VariantFold};
pub use stage1::{build_stage1_model, readout_all, train_stage1, Stage1Outcome};
pub use stage2::{build_population, train_stage2, FoldStats, PopulationInputs, Stage2Outcome};
