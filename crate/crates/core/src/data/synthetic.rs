use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brain::BrainGraph;
use crate::error::{Error, Result};
use crate::population::PhenotypeRecord;
use crate::rng::stable_hash;
use crate::semantic::{build_semantic_edges, mock_embedder, pearson_features, RegionEmbedding};
use crate::tensor::Tensor;
use crate::SeededRng;

use super::{Dataset, Provenance};

const TEST_TYPES: [&str; 3] = ["WASI", "WISC", "DAS"];

/// Parameters of a simulated cohort.
///
/// Regions are split into disjoint blocks (see [`Blocks`]). Each effect
/// adds a latent factor to its block's regions, so it only alters the
/// connectivity inside that block:
/// the disease factor is present for class 1 only, the site factor loads
/// with a site-specific sign pattern, the gender factor is present for one
/// gender and the age factor scales with age.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCohortSpec {
    pub n_subjects: usize,
    pub regions: usize,
    pub timepoints: usize,
    pub n_sites: usize,
    pub disease_effect: f64,
    pub site_effect: f64,
    pub gender_effect: f64,
    pub age_effect: f64,
    pub noise_std: f64,
    /// Std of the per-subject multiplicative jitter on every effect.
    pub effect_jitter: f64,
    /// Common signal added to all regions.
    pub global_signal: f64,
    pub male_fraction: f64,
    /// Class-1 shift of the IQ scores, in population standard deviations
    /// (negative lowers class-1 IQ).
    pub iq_label_shift: f64,
    pub iq_missing_rate: f64,
    pub education_missing_rate: f64,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticCohortSpec {
    fn default() -> Self {
        SyntheticCohortSpec {
            n_subjects: 60,
            regions: 32,
            timepoints: 128,
            n_sites: 3,
            disease_effect: 0.6,
            site_effect: 0.8,
            gender_effect: 0.3,
            age_effect: 0.3,
            noise_std: 1.0,
            effect_jitter: 0.3,
            global_signal: 0.0,
            male_fraction: 0.5,
            iq_label_shift: 0.0,
            iq_missing_rate: 0.1,
            education_missing_rate: 0.2,
            embedding_dim: 16,
            seed: 0,
        }
    }
}

/// Region index ranges of the simulated effects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Blocks {
    pub disease: std::ops::Range<usize>,
    pub site: std::ops::Range<usize>,
    pub gender: std::ops::Range<usize>,
    pub age: std::ops::Range<usize>,
    pub noise: std::ops::Range<usize>,
}

impl Blocks {
    pub fn for_regions(r: usize) -> Blocks {
        let q = r / 4;
        let e = r / 8;
        Blocks {
            disease: 0..q,
            site: q..2 * q,
            gender: 2 * q..2 * q + e,
            age: 2 * q + e..3 * q,
            noise: 3 * q..r,
        }
    }

    pub fn name_of(&self, region: usize) -> &'static str {
        if self.disease.contains(&region) {
            "disease"
        } else if self.site.contains(&region) {
            "site"
        } else if self.gender.contains(&region) {
            "gender"
        } else if self.age.contains(&region) {
            "age"
        } else {
            "noise"
        }
    }
}

impl SyntheticCohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 || self.n_subjects < 4 * self.n_sites {
            return Err(Error::Config(format!(
                "{} subjects cannot be balanced over {} sites (need at least 4 per site)",
                self.n_subjects, self.n_sites
            )));
        }
        if self.regions < 8 {
            return Err(Error::Config(format!("regions = {} < 8", self.regions)));
        }
        if self.timepoints < 3 * self.regions {
            return Err(Error::Config(format!(
                "timepoints = {} < 3 × regions = {}",
                self.timepoints,
                3 * self.regions
            )));
        }
        let effects = [
            ("disease_effect", self.disease_effect),
            ("site_effect", self.site_effect),
            ("gender_effect", self.gender_effect),
            ("age_effect", self.age_effect),
            ("effect_jitter", self.effect_jitter),
            ("global_signal", self.global_signal),
        ];
        for (name, v) in effects {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value ≥ 0")));
            }
        }
        if !(self.noise_std > 0.0) {
            return Err(Error::Config("noise_std must be positive".into()));
        }
        for (name, p) in [
            ("male_fraction", self.male_fraction),
            ("iq_missing_rate", self.iq_missing_rate),
            ("education_missing_rate", self.education_missing_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Region embeddings whose cosine structure follows the effect blocks:
/// each vector mixes a block-name direction with a weaker region-specific one.
pub fn synthetic_region_embeddings(regions: usize, dim: usize, seed: u64) -> Result<Vec<RegionEmbedding>> {
    let blocks = Blocks::for_regions(regions);
    (0..regions)
        .map(|r| {
            let block = blocks.name_of(r);
            let name = format!("{block}_{r}");
            let shared = mock_embedder(r, block, dim, seed)?;
            let own = mock_embedder(r, &name, dim, seed)?;
            let vector = shared.vector.iter().zip(&own.vector).map(|(a, b)| a + 0.5 * b).collect();
            Ok(RegionEmbedding {
                region_id: r,
                region_name: name,
                vector,
            })
        })
        .collect()
}

struct Subject {
    site: usize,
    label: usize,
}

/// Simulates a cohort: per-subject region timeseries → Pearson FC, plus
/// phenotypes with labels balanced within every site.
pub fn generate_cohort(spec: &SyntheticCohortSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n_subjects;
    let r = spec.regions;
    let blocks = Blocks::for_regions(r);
    let mut cohort_rng = SeededRng::new(spec.seed).derive(stable_hash(b"cohort"));

    let site_patterns: Vec<Vec<f64>> = (0..spec.n_sites)
        .map(|_| {
            blocks
                .site
                .clone()
                .map(|_| if cohort_rng.bernoulli(0.5) { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();

    let mut subjects = Vec::with_capacity(n);
    for s in 0..spec.n_sites {
        let count = n / spec.n_sites + usize::from(s < n % spec.n_sites);
        let mut labels: Vec<usize> = (0..count).map(|i| i % 2).collect();
        cohort_rng.shuffle(&mut labels);
        subjects.extend(labels.into_iter().map(|label| Subject { site: s, label }));
    }

    let results: Vec<Result<(Tensor, PhenotypeRecord)>> = subjects
        .par_iter()
        .enumerate()
        .map(|(i, subj)| simulate_subject(spec, &blocks, &site_patterns, i, subj))
        .collect();

    let embeddings = synthetic_region_embeddings(r, spec.embedding_dim, spec.seed)?;
    let edges = Arc::new(build_semantic_edges(&embeddings, 0.6)?);
    let mut brains = Vec::with_capacity(n);
    let mut phenotypes = Vec::with_capacity(n);
    for (res, subj) in results.into_iter().zip(&subjects) {
        let (fc, pheno) = res?;
        brains.push(BrainGraph {
            subject_id: pheno.subject_id.clone(),
            label: subj.label,
            features: fc,
            edges: Arc::clone(&edges),
        });
        phenotypes.push(pheno);
    }
    Dataset::new(brains, phenotypes, embeddings, Provenance::Synthetic(spec.clone()))
}

fn simulate_subject(
    spec: &SyntheticCohortSpec,
    blocks: &Blocks,
    site_patterns: &[Vec<f64>],
    index: usize,
    subj: &Subject,
) -> Result<(Tensor, PhenotypeRecord)> {
    let mut rng = SeededRng::new(spec.seed).derive(index as u64);
    let t = spec.timepoints;
    let age = rng.uniform_range(8.0, 60.0);
    let male = rng.bernoulli(spec.male_fraction);
    let mut jitter = || (1.0 + spec.effect_jitter * rng.normal()).max(0.0);
    let (j_d, j_s, j_g, j_a) = (jitter(), jitter(), jitter(), jitter());

    let factor = |rng: &mut SeededRng| (0..t).map(|_| rng.normal()).collect::<Vec<f64>>();
    let f_d = factor(&mut rng);
    let f_s = factor(&mut rng);
    let f_g = factor(&mut rng);
    let f_a = factor(&mut rng);
    let f_glob = factor(&mut rng);

    let disease = if subj.label == 1 { spec.disease_effect * j_d } else { 0.0 };
    let gender = if male { spec.gender_effect * j_g } else { 0.0 };
    let age_load = spec.age_effect * j_a * (age - 8.0) / 52.0;
    let mut series = Tensor::zeros(spec.regions, t);
    for reg in 0..spec.regions {
        let (load, f): (f64, &[f64]) = if blocks.disease.contains(&reg) {
            (disease, &f_d)
        } else if blocks.site.contains(&reg) {
            (spec.site_effect * j_s * site_patterns[subj.site][reg - blocks.site.start], &f_s)
        } else if blocks.gender.contains(&reg) {
            (gender, &f_g)
        } else if blocks.age.contains(&reg) {
            (age_load, &f_a)
        } else {
            (0.0, &f_d)
        };
        let row = series.row_mut(reg);
        for k in 0..t {
            row[k] = spec.noise_std * rng.normal() + load * f[k] + spec.global_signal * f_glob[k];
        }
    }
    let fc = pearson_features(&series, false)?;

    let g = rng.normal() + spec.iq_label_shift * subj.label as f64;
    let fiq = 100.0 + 15.0 * g;
    let piq = fiq + 7.0 * rng.normal();
    let viq = fiq + 7.0 * rng.normal();
    let mut maybe = |v: f64, p: f64| (!rng.bernoulli(p)).then_some(v);
    let fiq = maybe(fiq, spec.iq_missing_rate);
    let piq = maybe(piq, spec.iq_missing_rate);
    let viq = maybe(viq, spec.iq_missing_rate);
    let edu = 10.0 + (age - 8.0).min(12.0) * 0.5 + rng.uniform_range(0.0, 4.0);
    let education = (!rng.bernoulli(spec.education_missing_rate)).then_some(edu);
    let pheno = PhenotypeRecord {
        subject_id: format!("sub-{index:04}"),
        site: format!("site{}", subj.site),
        gender: if male { "M" } else { "F" }.to_string(),
        age,
        fiq,
        piq,
        viq,
        iq_test_type: TEST_TYPES[subj.site % TEST_TYPES.len()].to_string(),
        education,
    };
    Ok((fc, pheno))
}
