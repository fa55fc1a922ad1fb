use std::io::Write;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which pairs a condition may connect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    /// Only subjects whose categories differ.
    CrossCategory,
    /// Only subjects sharing the category.
    SameCategory,
    /// Plain similarity kNN under one pseudo-condition.
    SimilarityOnly,
}

/// Directed edges `src → dst` (src aggregates from dst) of one relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub edges: Vec<(usize, usize, f64)>,
}

/// Top-k neighbor selection per condition under a category mask.
///
/// `categories[c][i]` is the category code of node `i` under condition `c`.
/// With `|𝒞|` conditions each one receives `⌈k / |𝒞|⌉` neighbors per node.
/// Candidates are ranked by affinity, ties by lower index.
pub fn build_condition_edges(
    affinity: &Tensor,
    names: &[String],
    categories: &[Vec<usize>],
    k: usize,
    mode: EdgeMode,
) -> Result<Vec<Relation>> {
    let n = affinity.rows();
    if affinity.cols() != n {
        return Err(Error::dim("build_condition_edges", affinity.shape(), (n, n)));
    }
    if k == 0 {
        return Err(Error::Config("top-k must be at least 1".into()));
    }
    if names.len() != categories.len() {
        return Err(Error::Contract("one name per condition is required".into()));
    }
    if mode != EdgeMode::SimilarityOnly && categories.is_empty() {
        return Err(Error::Config("category-masked edges need at least one condition".into()));
    }
    for c in categories {
        if c.len() != n {
            return Err(Error::dim("condition categories", (n, 1), (c.len(), 1)));
        }
    }
    if mode == EdgeMode::SimilarityOnly {
        let edges = (0..n).flat_map(|i| top_neighbors(affinity, i, k, |_| true)).collect();
        return Ok(vec![Relation {
            name: "similarity".into(),
            edges,
        }]);
    }
    let budget = k.div_ceil(categories.len());
    let mut out = Vec::with_capacity(categories.len());
    for (name, cats) in names.iter().zip(categories) {
        let mut edges = Vec::new();
        for i in 0..n {
            let keep = |j: usize| match mode {
                EdgeMode::CrossCategory => cats[i] != cats[j],
                EdgeMode::SameCategory => cats[i] == cats[j],
                EdgeMode::SimilarityOnly => true,
            };
            let picked = top_neighbors(affinity, i, budget, keep);
            if picked.is_empty() {
                debug!("node {i} has no admissible neighbor under condition {name}");
            }
            edges.extend(picked);
        }
        out.push(Relation {
            name: name.clone(),
            edges,
        });
    }
    Ok(out)
}

fn top_neighbors(a: &Tensor, i: usize, budget: usize, keep: impl Fn(usize) -> bool) -> Vec<(usize, usize, f64)> {
    let mut cand: Vec<usize> = (0..a.rows()).filter(|&j| j != i && keep(j)).collect();
    cand.sort_by(|&x, &y| a.get(i, y).total_cmp(&a.get(i, x)).then(x.cmp(&y)));
    cand.truncate(budget);
    cand.into_iter().map(|j| (i, j, a.get(i, j))).collect()
}

/// `condition,src,dst,affinity` rows.
pub fn write_edge_dump<W: Write>(writer: W, relations: &[Relation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["condition", "src", "dst", "affinity"])?;
    for r in relations {
        for &(s, d, a) in &r.edges {
            w.write_record([r.name.clone(), s.to_string(), d.to_string(), a.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
