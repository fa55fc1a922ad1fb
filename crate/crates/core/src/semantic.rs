//! Region-embedding similarity graphs and connectivity features.
//!
//! Brain regions are connected when the cosine similarity of their text
//! embeddings reaches a threshold; the similarity itself becomes the edge
//! weight. One edge set is shared by every subject of an atlas.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stable_hash, SeededRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEmbedding {
    pub region_id: usize,
    pub region_name: String,
    pub vector: Vec<f64>,
}

/// Undirected weighted edges over `0..node_count`, stored with `u < v`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdges {
    pub node_count: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl WeightedEdges {
    pub fn new(node_count: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(u, v, w) in &edges {
            if u >= v || v >= node_count {
                return Err(Error::Contract(format!(
                    "edge ({u}, {v}) must satisfy u < v < {node_count}"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Contract(format!("edge ({u}, {v}) has weight {w}")));
            }
        }
        Ok(WeightedEdges { node_count, edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count];
        for &(u, v, _) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    pub fn isolated_nodes(&self) -> Vec<usize> {
        self.degrees()
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Edges of the semantic brain graph and the threshold that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticEdgeSet {
    pub threshold: f64,
    pub graph: WeightedEdges,
}

impl SemanticEdgeSet {
    pub fn region_count(&self) -> usize {
        self.graph.node_count
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.graph.edges
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine_similarity", (1, a.len()), (1, b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Connects every region pair whose embedding cosine similarity is at least
/// `threshold`; the similarity is the edge weight.
pub fn build_semantic_edges(embeddings: &[RegionEmbedding], threshold: f64) -> Result<SemanticEdgeSet> {
    if embeddings.len() < 2 {
        return Err(Error::Degenerate("at least two regions are required".into()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!("threshold {threshold} outside [0, 1]")));
    }
    validate_embeddings(embeddings)?;
    let r = embeddings.len();
    let mut by_id: Vec<&RegionEmbedding> = embeddings.iter().collect();
    by_id.sort_by_key(|e| e.region_id);
    let mut edges = Vec::new();
    for u in 0..r {
        for v in u + 1..r {
            let s = cosine_similarity(&by_id[u].vector, &by_id[v].vector)?;
            if s >= threshold {
                edges.push((u, v, s));
            }
        }
    }
    let graph = WeightedEdges::new(r, edges)?;
    let isolated = graph.isolated_nodes();
    if !isolated.is_empty() {
        warn!(
            "semantic graph at threshold {threshold} leaves {} of {r} regions isolated",
            isolated.len()
        );
    }
    Ok(SemanticEdgeSet { threshold, graph })
}

fn validate_embeddings(embeddings: &[RegionEmbedding]) -> Result<()> {
    let dim = embeddings[0].vector.len();
    if dim == 0 {
        return Err(Error::Data("embedding dimension must be positive".into()));
    }
    let mut seen = vec![false; embeddings.len()];
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(Error::Data(format!(
                "region {} has embedding dimension {}, expected {dim}",
                e.region_id,
                e.vector.len()
            )));
        }
        if e.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data(format!("region {} has a non-finite embedding", e.region_id)));
        }
        if e.region_id >= seen.len() || seen[e.region_id] {
            return Err(Error::Data(format!(
                "region ids must be 0..{} without gaps or repeats (saw {})",
                seen.len(),
                e.region_id
            )));
        }
        seen[e.region_id] = true;
    }
    Ok(())
}

/// Deterministic stand-in for a text encoder: a Gaussian vector drawn from
/// a stream keyed by `hash(name) ^ seed`.
pub fn mock_embedder(region_id: usize, region_name: &str, dim: usize, seed: u64) -> Result<RegionEmbedding> {
    if dim < 2 {
        return Err(Error::Parameter(format!("embedding dimension {dim} < 2")));
    }
    let mut rng = SeededRng::new(stable_hash(region_name.as_bytes()) ^ seed);
    let vector = (0..dim).map(|_| rng.normal()).collect();
    Ok(RegionEmbedding {
        region_id,
        region_name: region_name.to_string(),
        vector,
    })
}

/// Pearson correlation between region rows of an `R × T` series matrix.
///
/// With `global_regression`, each region is first residualized against the
/// across-region mean series (least squares with intercept).
pub fn pearson_features(series: &Tensor, global_regression: bool) -> Result<Tensor> {
    let (r, t) = series.shape();
    if t < 3 {
        return Err(Error::Degenerate(format!("need at least 3 timepoints, got {t}")));
    }
    let mut rows: Vec<Vec<f64>> = (0..r).map(|i| series.row(i).to_vec()).collect();
    if global_regression {
        let global: Vec<f64> = (0..t).map(|k| rows.iter().map(|row| row[k]).sum::<f64>() / r as f64).collect();
        let gm = global.iter().sum::<f64>() / t as f64;
        let gc: Vec<f64> = global.iter().map(|g| g - gm).collect();
        let gss: f64 = gc.iter().map(|g| g * g).sum();
        if gss > 0.0 {
            for row in rows.iter_mut() {
                let m = row.iter().sum::<f64>() / t as f64;
                let beta = row.iter().zip(&gc).map(|(x, g)| (x - m) * g).sum::<f64>() / gss;
                for (x, g) in row.iter_mut().zip(&gc) {
                    *x = *x - m - beta * g;
                }
            }
        }
    }
    let mut centered = Vec::with_capacity(r);
    for (i, row) in rows.iter().enumerate() {
        let m = row.iter().sum::<f64>() / t as f64;
        let c: Vec<f64> = row.iter().map(|x| x - m).collect();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 * (1.0 + m.abs()) * (t as f64).sqrt() {
            return Err(Error::Degenerate(format!("region {i} has a constant series")));
        }
        centered.push(c.into_iter().map(|x| x / norm).collect::<Vec<f64>>());
    }
    let mut out = Tensor::identity(r);
    for i in 0..r {
        for j in i + 1..r {
            let c: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let c = c.clamp(-1.0, 1.0);
            out.set(i, j, c);
            out.set(j, i, c);
        }
    }
    Ok(out)
}

/// Reads `region_id,region_name,e0,...` rows.
pub fn read_embeddings<R: Read>(reader: R) -> Result<Vec<RegionEmbedding>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "region_id" || &header[1] != "region_name" {
        return Err(Error::Data(
            "embedding file header must start with region_id,region_name,e0".into(),
        ));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("embedding row {}: bad number {s:?}", line + 1)))
        };
        let region_id = rec[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("embedding row {}: bad region id", line + 1)))?;
        let vector = rec.iter().skip(2).map(parse).collect::<Result<Vec<f64>>>()?;
        out.push(RegionEmbedding {
            region_id,
            region_name: rec[1].to_string(),
            vector,
        });
    }
    if !out.is_empty() {
        validate_embeddings(&out)?;
    }
    out.sort_by_key(|e| e.region_id);
    Ok(out)
}

pub fn write_embeddings<W: Write>(writer: W, embeddings: &[RegionEmbedding]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = embeddings.first().map(|e| e.vector.len()).unwrap_or(0);
    let mut header = vec!["region_id".to_string(), "region_name".to_string()];
    header.extend((0..dim).map(|k| format!("e{k}")));
    w.write_record(&header)?;
    for e in embeddings {
        let mut row = vec![e.region_id.to_string(), e.region_name.clone()];
        row.extend(e.vector.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<Vec<RegionEmbedding>> {
    read_embeddings(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(id: usize, v: &[f64]) -> RegionEmbedding {
        RegionEmbedding {
            region_id: id,
            region_name: format!("r{id}"),
            vector: v.to_vec(),
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[2.0, 3.0], &[2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - 0.7071).abs() < 1e-4);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn identical_embeddings_fully_connect() {
        let e: Vec<_> = (0..3).map(|i| emb(i, &[1.0, 2.0])).collect();
        let set = build_semantic_edges(&e, 0.5).unwrap();
        assert_eq!(set.edges().len(), 3);
        assert!(set.edges().iter().all(|&(_, _, w)| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_embeddings_leave_isolated_nodes() {
        let e = vec![emb(0, &[1.0, 0.0, 0.0]), emb(1, &[0.0, 1.0, 0.0]), emb(2, &[0.0, 0.0, 1.0])];
        let set = build_semantic_edges(&e, 0.5).unwrap();
        assert!(set.edges().is_empty());
        assert_eq!(set.graph.isolated_nodes(), vec![0, 1, 2]);
    }

    #[test]
    fn all_pairs_at_zero_threshold_match_brute_force() {
        let mut rng = SeededRng::new(3);
        let e: Vec<_> = (0..4)
            .map(|i| emb(i, &(0..5).map(|_| rng.uniform()).collect::<Vec<_>>()))
            .collect();
        let set = build_semantic_edges(&e, 0.0).unwrap();
        assert_eq!(set.edges().len(), 6);
        for &(u, v, w) in set.edges() {
            let a = &e[u].vector;
            let b = &e[v].vector;
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((w - dot / (na * nb)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_gapped_ids_and_bad_threshold() {
        let e = vec![emb(0, &[1.0, 0.0]), emb(2, &[0.0, 1.0])];
        assert!(matches!(build_semantic_edges(&e, 0.5), Err(Error::Data(_))));
        let e = vec![emb(0, &[1.0, 0.0]), emb(1, &[0.0, 1.0])];
        assert!(matches!(build_semantic_edges(&e, 1.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn mock_embedder_is_deterministic_and_name_sensitive() {
        let a = mock_embedder(0, "Hippocampus", 16, 9).unwrap();
        let b = mock_embedder(0, "Hippocampus", 16, 9).unwrap();
        assert_eq!(a, b);
        assert!((cosine_similarity(&a.vector, &a.vector).unwrap() - 1.0).abs() < 1e-12);
        let names: Vec<String> = (0..100).map(|i| format!("region-{i}")).collect();
        let vecs: Vec<_> = names
            .iter()
            .map(|n| mock_embedder(0, n, 8, 9).unwrap().vector)
            .collect();
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                assert_ne!(vecs[i], vecs[j]);
            }
        }
    }

    #[test]
    fn pearson_hand_cases() {
        let s = Tensor::from_rows(&[[1.0, 2.0, 4.0, 3.0], [1.0, 2.0, 4.0, 3.0], [-1.0, -2.0, -4.0, -3.0]])
            .unwrap();
        let c = pearson_features(&s, false).unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((c.get(0, 2) + 1.0).abs() < 1e-12);
        assert_eq!(c.get(1, 1), 1.0);
    }

    #[test]
    fn pearson_matches_covariance_over_std() {
        let mut rng = SeededRng::new(5);
        let data: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
        let s = Tensor::new(4, 50, data).unwrap();
        let c = pearson_features(&s, false).unwrap();
        let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = (s.row(i), s.row(j));
                let (ma, mb) = (mean(a), mean(b));
                let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / 49.0;
                let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / 49.0).sqrt();
                let sb = (b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / 49.0).sqrt();
                assert!((c.get(i, j) - cov / (sa * sb)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn global_regression_removes_shared_signal() {
        let mut rng = SeededRng::new(6);
        let t = 200;
        let shared: Vec<f64> = (0..t).map(|_| rng.normal()).collect();
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| shared.iter().map(|g| 3.0 * g + rng.normal()).collect())
            .collect();
        let s = Tensor::from_rows(&rows).unwrap();
        let raw = pearson_features(&s, false).unwrap();
        let gr = pearson_features(&s, true).unwrap();
        assert!(raw.get(0, 1) > 0.8);
        assert!(gr.get(0, 1) < raw.get(0, 1));
        for i in 0..4 {
            assert!((gr.get(i, i) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_series_names_region() {
        let s = Tensor::from_rows(&[[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]]).unwrap();
        let err = pearson_features(&s, false).unwrap_err().to_string();
        assert!(err.contains("region 1"), "{err}");
    }

    #[test]
    fn embedding_csv_round_trip() {
        let e: Vec<_> = (0..3)
            .map(|i| mock_embedder(i, &format!("roi {i}"), 4, 1).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &e).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("region_id,region_name,e0,e1,e2,e3\n"));
        assert_eq!(read_embeddings(&buf[..]).unwrap(), e);
    }

    proptest! {
        #[test]
        fn raising_threshold_only_prunes(seed in 0u64..500, t1 in 0.0f64..1.0, dt in 0.0f64..0.5) {
            let mut rng = SeededRng::new(seed);
            let e: Vec<_> = (0..7)
                .map(|i| emb(i, &(0..4).map(|_| rng.uniform()).collect::<Vec<_>>()))
                .collect();
            let t2 = (t1 + dt).min(1.0);
            let low = build_semantic_edges(&e, t1).unwrap();
            let high = build_semantic_edges(&e, t2).unwrap();
            for edge in high.edges() {
                prop_assert!(low.edges().contains(edge));
            }
            // non-negative embeddings: every pair connects at zero
            prop_assert_eq!(build_semantic_edges(&e, 0.0).unwrap().edges().len(), 21);
        }

        #[test]
        fn edge_weights_ignore_input_order(seed in 0u64..500) {
            let mut rng = SeededRng::new(seed);
            let e: Vec<_> = (0..6)
                .map(|i| emb(i, &(0..3).map(|_| rng.normal()).collect::<Vec<_>>()))
                .collect();
            let mut rev = e.clone();
            rev.reverse();
            prop_assert_eq!(build_semantic_edges(&e, 0.2).unwrap(), build_semantic_edges(&rev, 0.2).unwrap());
        }
    }
}
