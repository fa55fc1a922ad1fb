use std::collections::BTreeMap;
use std::io::{Read, Write};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const AGE_GROUPS: usize = 6;

/// One subject's demographics. Empty CSV cells load as `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeRecord {
    pub subject_id: String,
    pub site: String,
    pub gender: String,
    pub age: f64,
    pub fiq: Option<f64>,
    pub piq: Option<f64>,
    pub viq: Option<f64>,
    pub iq_test_type: String,
    pub education: Option<f64>,
}

impl PhenotypeRecord {
    fn iq(&self, k: usize) -> Option<f64> {
        [self.fiq, self.piq, self.viq][k]
    }
}

/// Blocks that can enter the phenotype feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhenotypeField {
    Site,
    Gender,
    AgeGroup,
    /// FIQ, PIQ, VIQ and the test-type one-hot.
    Iq,
    Education,
}

impl PhenotypeField {
    pub const ALL: [PhenotypeField; 5] = [
        PhenotypeField::Site,
        PhenotypeField::Gender,
        PhenotypeField::AgeGroup,
        PhenotypeField::Iq,
        PhenotypeField::Education,
    ];
}

/// Population-graph relation types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Site,
    Gender,
    Age,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Site, Condition::Gender, Condition::Age];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Site => "site",
            Condition::Gender => "gender",
            Condition::Age => "age",
        }
    }
}

pub fn read_phenotypes<R: Read>(reader: R) -> Result<Vec<PhenotypeRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in r.deserialize::<PhenotypeRecord>().enumerate() {
        let rec = row.map_err(|e| Error::Data(format!("phenotype row {}: {e}", line + 1)))?;
        if !rec.age.is_finite() {
            return Err(Error::Data(format!("subject {} has a non-finite age", rec.subject_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_phenotypes<W: Write>(writer: W, records: &[PhenotypeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for rec in records {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard deviation used to standardize one numeric column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

impl ZScore {
    pub fn fit(values: &[f64]) -> ZScore {
        if values.is_empty() {
            return ZScore { mean: 0.0, std: 1.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        ZScore { mean, std }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Phenotype feature encoder whose statistics come from training subjects only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeEncoder {
    pub selection: Vec<PhenotypeField>,
    pub sites: Vec<String>,
    pub genders: Vec<String>,
    pub test_types: Vec<String>,
    /// Five ascending cut points; the group is the number of cuts ≤ age.
    pub age_cutpoints: Vec<f64>,
    /// Per test type, training means of FIQ, PIQ and VIQ.
    pub iq_means: BTreeMap<String, [f64; 3]>,
    /// Overall training means, used for test types unseen in training.
    pub iq_fallback: [f64; 3],
    pub iq_zscore: [ZScore; 3],
    pub education_mean: f64,
    pub education_zscore: ZScore,
}

impl PhenotypeEncoder {
    pub fn fit(records: &[PhenotypeRecord], train: &[usize], selection: &[PhenotypeField]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("phenotype encoder needs at least one training subject".into()));
        }
        let rows: Vec<&PhenotypeRecord> = train.iter().map(|&i| &records[i]).collect();
        let uniq = |f: fn(&PhenotypeRecord) -> &str| {
            let mut v: Vec<String> = rows.iter().map(|r| f(r).to_string()).collect();
            v.sort();
            v.dedup();
            v
        };
        let mut selection = selection.to_vec();
        selection.sort();
        selection.dedup();

        let mut ages: Vec<f64> = rows.iter().map(|r| r.age).collect();
        ages.sort_by(f64::total_cmp);
        let n = ages.len();
        let age_cutpoints = (1..AGE_GROUPS).map(|k| ages[(k * n / AGE_GROUPS).min(n - 1)]).collect();

        let mean_of = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        let mut iq_fallback = [0.0; 3];
        for (k, slot) in iq_fallback.iter_mut().enumerate() {
            *slot = mean_of(rows.iter().filter_map(|r| r.iq(k)).collect()).unwrap_or(0.0);
        }
        let test_types = uniq(|r| &r.iq_test_type);
        let mut iq_means = BTreeMap::new();
        for t in &test_types {
            let mut m = [0.0; 3];
            for (k, slot) in m.iter_mut().enumerate() {
                *slot = mean_of(
                    rows.iter()
                        .filter(|r| &r.iq_test_type == t)
                        .filter_map(|r| r.iq(k))
                        .collect(),
                )
                .unwrap_or(iq_fallback[k]);
            }
            iq_means.insert(t.clone(), m);
        }
        let education_mean = mean_of(rows.iter().filter_map(|r| r.education).collect()).unwrap_or(0.0);

        let mut enc = PhenotypeEncoder {
            selection,
            sites: uniq(|r| &r.site),
            genders: uniq(|r| &r.gender),
            test_types,
            age_cutpoints,
            iq_means,
            iq_fallback,
            iq_zscore: [ZScore { mean: 0.0, std: 1.0 }; 3],
            education_mean,
            education_zscore: ZScore { mean: 0.0, std: 1.0 },
        };
        for k in 0..3 {
            let vals: Vec<f64> = rows.iter().map(|r| enc.imputed_iq(r, k)).collect();
            enc.iq_zscore[k] = ZScore::fit(&vals);
        }
        let edu: Vec<f64> = rows.iter().map(|r| r.education.unwrap_or(education_mean)).collect();
        enc.education_zscore = ZScore::fit(&edu);
        Ok(enc)
    }

    pub fn age_group(&self, age: f64) -> usize {
        self.age_cutpoints.iter().filter(|&&c| c <= age).count()
    }

    fn imputed_iq(&self, r: &PhenotypeRecord, k: usize) -> f64 {
        r.iq(k).unwrap_or_else(|| {
            self.iq_means
                .get(&r.iq_test_type)
                .map(|m| m[k])
                .unwrap_or(self.iq_fallback[k])
        })
    }

    pub fn dim(&self) -> usize {
        self.selection
            .iter()
            .map(|f| match f {
                PhenotypeField::Site => self.sites.len(),
                PhenotypeField::Gender => self.genders.len(),
                PhenotypeField::AgeGroup => AGE_GROUPS,
                PhenotypeField::Iq => 3 + self.test_types.len(),
                PhenotypeField::Education => 1,
            })
            .sum()
    }

    pub fn encode(&self, records: &[PhenotypeRecord]) -> Tensor {
        let d = self.dim();
        let mut out = Tensor::zeros(records.len(), d);
        for (i, r) in records.iter().enumerate() {
            let row = out.row_mut(i);
            let mut at = 0;
            for f in &self.selection {
                match f {
                    PhenotypeField::Site => at = one_hot(row, at, &self.sites, &r.site, "site", &r.subject_id),
                    PhenotypeField::Gender => {
                        at = one_hot(row, at, &self.genders, &r.gender, "gender", &r.subject_id)
                    }
                    PhenotypeField::AgeGroup => {
                        row[at + self.age_group(r.age)] = 1.0;
                        at += AGE_GROUPS;
                    }
                    PhenotypeField::Iq => {
                        for k in 0..3 {
                            row[at + k] = self.iq_zscore[k].apply(self.imputed_iq(r, k));
                        }
                        at = one_hot(row, at + 3, &self.test_types, &r.iq_test_type, "iq_test_type", &r.subject_id);
                    }
                    PhenotypeField::Education => {
                        row[at] = self.education_zscore.apply(r.education.unwrap_or(self.education_mean));
                        at += 1;
                    }
                }
            }
            debug_assert_eq!(at, d);
        }
        out
    }
}

fn one_hot(row: &mut [f64], at: usize, cats: &[String], value: &str, field: &str, subject: &str) -> usize {
    match cats.iter().position(|c| c == value) {
        Some(k) => row[at + k] = 1.0,
        None => info!("subject {subject}: {field} '{value}' unseen in training, zero block"),
    }
    at + cats.len()
}

/// Category codes per condition, in the order given. Site and gender codes
/// index the sorted distinct values over all records; age codes come from
/// the encoder's training cut points.
pub fn condition_categories(
    records: &[PhenotypeRecord],
    conditions: &[Condition],
    encoder: &PhenotypeEncoder,
) -> Vec<Vec<usize>> {
    let intern = |f: fn(&PhenotypeRecord) -> &str| {
        let mut names: Vec<&str> = records.iter().map(f).collect();
        names.sort();
        names.dedup();
        if names.len() < 2 {
            warn!("condition has a single category; cross-category edges will be empty");
        }
        records
            .iter()
            .map(|r| names.binary_search(&f(r)).expect("interned"))
            .collect::<Vec<usize>>()
    };
    conditions
        .iter()
        .map(|c| match c {
            Condition::Site => intern(|r| &r.site),
            Condition::Gender => intern(|r| &r.gender),
            Condition::Age => records.iter().map(|r| encoder.age_group(r.age)).collect(),
        })
        .collect()
}
