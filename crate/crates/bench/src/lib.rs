//! Shared fixtures for the criterion benches.

use brainpop_core::data::{generate_cohort, Dataset, SyntheticCohortSpec};
use brainpop_core::{SeededRng, Tensor};

pub fn random_tensor(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut rng = SeededRng::new(seed);
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Tensor::new(rows, cols, data).expect("shape matches")
}

pub fn cohort(n_subjects: usize, regions: usize) -> Dataset {
    generate_cohort(&SyntheticCohortSpec {
        n_subjects,
        regions,
        timepoints: 96,
        ..Default::default()
    })
    .expect("valid spec")
}
