use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::types::FeatureMatrix;

/// Weighted undirected graph stored as symmetric adjacency lists sorted by
/// neighbor index. Self-loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl SimilarityGraph {
    pub fn empty(n: usize) -> Self {
        SimilarityGraph {
            adjacency: vec![Vec::new(); n],
        }
    }

    /// Builds a graph from undirected edges. Each `(i, j, w)` is stored in both
    /// directions; self-loops are dropped and repeated pairs keep the last weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Dimension(format!("edge ({i}, {j}) in a graph of {n} nodes")));
            }
            if !w.is_finite() {
                return Err(Error::Numeric(format!("edge ({i}, {j}) has weight {w}")));
            }
            if i == j {
                continue;
            }
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for list in &mut adjacency {
            list.reverse();
            list.sort_by_key(|&(j, _)| j);
            list.dedup_by_key(|&mut (j, _)| j);
        }
        Ok(SimilarityGraph { adjacency })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.adjacency[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .ok()
            .map(|p| self.adjacency[i][p].1)
    }

    /// Every stored direction `(i, j, w)`; each undirected edge appears twice.
    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&(j, w)| (i, j, w)))
    }

    /// Each undirected edge once, as `(i, j, w)` with `i < j`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.directed_edges().filter(|&(i, j, _)| i < j)
    }

    pub fn is_symmetric(&self) -> bool {
        self.directed_edges().all(|(i, j, w)| self.weight(j, i) == Some(w))
    }

    /// Sum of incident edge weights per node.
    pub fn strengths(&self) -> Vec<f64> {
        self.adjacency
            .iter()
            .map(|l| l.iter().map(|&(_, w)| w).sum())
            .collect()
    }

    /// Writes `i j w` per undirected edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, j, w) in self.undirected_edges() {
            writeln!(out, "{i} {j} {w}")?;
        }
        Ok(())
    }
}

fn require_normalized(features: &FeatureMatrix) -> Result<()> {
    if !features.is_normalized() {
        return Err(Error::Contract(
            "similarity graphs need L2-normalized features".into(),
        ));
    }
    Ok(())
}

/// Complete cosine-similarity graph: `e_ij = v_i · v_j` for every `i ≠ j`.
pub fn build_graph(features: &FeatureMatrix) -> Result<SimilarityGraph> {
    require_normalized(features)?;
    let m = features.matrix();
    let n = m.rows();
    let adjacency = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, dot(m.row(i), m.row(j))))
                .collect()
        })
        .collect();
    Ok(SimilarityGraph { adjacency })
}

/// Keeps edges with weight strictly above `tau_f`.
pub fn filter_edges(g: &SimilarityGraph, tau_f: f64) -> SimilarityGraph {
    SimilarityGraph {
        adjacency: g
            .adjacency
            .iter()
            .enumerate()
            .map(|(i, list)| {
                list.iter()
                    .copied()
                    .filter(|&(j, w)| j != i && w > tau_f)
                    .collect()
            })
            .collect(),
    }
}

/// Stronger edges first, then lower neighbor index.
fn rank_edges(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn top_k(mut candidates: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, rank_edges);
        candidates.truncate(k);
    }
    candidates
}

/// Symmetrizes per-node choices by union: an edge survives if either endpoint chose it.
fn union_symmetrize(n: usize, chosen: Vec<Vec<(usize, f64)>>) -> SimilarityGraph {
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, list) in chosen.into_iter().enumerate() {
        for (j, w) in list {
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
    }
    for list in &mut adjacency {
        list.sort_by_key(|&(j, _)| j);
        list.dedup_by_key(|&mut (j, _)| j);
    }
    SimilarityGraph { adjacency }
}

/// Keeps, for every node, its `k` strongest incident edges (ties to the lower
/// neighbor index), then re-symmetrizes by union.
pub fn knn_prune(g: &SimilarityGraph, k: usize) -> Result<SimilarityGraph> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let chosen = g.adjacency.iter().map(|list| top_k(list.clone(), k)).collect();
    Ok(union_symmetrize(g.node_count(), chosen))
}

/// `knn_prune(filter_edges(build_graph(features), tau_f), k)` computed row by
/// row, without materializing the complete graph.
pub fn knn_similarity_graph(features: &FeatureMatrix, tau_f: f64, k: usize) -> Result<SimilarityGraph> {
    require_normalized(features)?;
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    let m = features.matrix();
    let n = m.rows();
    let chosen: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ri = m.row(i);
            let candidates = (0..n)
                .filter(|&j| j != i)
                .filter_map(|j| {
                    let w = dot(ri, m.row(j));
                    (w > tau_f).then_some((j, w))
                })
                .collect();
            top_k(candidates, k)
        })
        .collect();
    Ok(union_symmetrize(n, chosen))
}
