//! Two-level map equation for undirected weighted graphs.
//!
//! Visit rates are proportional to node strength, `p_a = s_a / 2W`, and each
//! direction of an edge carries flow `w / 2W`. For a partition into modules `m`
//! with exit flow `q_m` and internal visit rate `p_m`, the description length in
//! bits is
//!
//! ```text
//! L = plogp(Σ q_m) − 2 Σ plogp(q_m) − Σ_a plogp(p_a) + Σ plogp(q_m + p_m)
//! ```
//!
//! which equals `q·H(Q) + Σ p_m↻·H(P_m)`. Disconnected components need no
//! special handling: strength-proportional rates already weight each component
//! by its share of the total strength.

use super::graph::SimilarityGraph;
use crate::error::{Error, Result};
use crate::types::ClusterResult;

#[inline]
pub(crate) fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Node visit rates and per-direction edge flows.
#[derive(Debug, Clone)]
pub(crate) struct Flow {
    pub node: Vec<f64>,
    /// Symmetric adjacency carrying `w / 2W`.
    pub edges: Vec<Vec<(usize, f64)>>,
}

impl Flow {
    pub fn from_graph(g: &SimilarityGraph) -> Result<Self> {
        if let Some((i, j, w)) = g.directed_edges().find(|&(_, _, w)| w < 0.0) {
            return Err(Error::DegenerateGraph(format!(
                "edge ({i}, {j}) has negative weight {w}"
            )));
        }
        let total: f64 = g.strengths().iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateGraph("total edge weight is zero".into()));
        }
        let edges: Vec<Vec<(usize, f64)>> = (0..g.node_count())
            .map(|i| g.neighbors(i).iter().map(|&(j, w)| (j, w / total)).collect())
            .collect();
        let node = edges.iter().map(|l| l.iter().map(|&(_, f)| f).sum()).collect();
        Ok(Flow { node, edges })
    }

    pub fn node_entropy_term(&self) -> f64 {
        self.node.iter().map(|&p| plogp(p)).sum()
    }
}

/// Codelength from per-module exit and visit totals.
pub(crate) fn codelength_from_modules(exit: &[f64], visit: &[f64], node_term: f64) -> f64 {
    let total_exit: f64 = exit.iter().sum();
    let exit_term: f64 = exit.iter().map(|&q| plogp(q)).sum();
    let module_term: f64 = exit.iter().zip(visit).map(|(&q, &p)| plogp(q + p)).sum();
    plogp(total_exit) - 2.0 * exit_term - node_term + module_term
}

pub(crate) fn codelength_for_assignment(flow: &Flow, assignment: &[usize], modules: usize) -> f64 {
    let mut exit = vec![0.0; modules];
    let mut visit = vec![0.0; modules];
    for (a, &m) in assignment.iter().enumerate() {
        visit[m] += flow.node[a];
        for &(b, f) in &flow.edges[a] {
            if assignment[b] != m {
                exit[m] += f;
            }
        }
    }
    codelength_from_modules(&exit, &visit, flow.node_entropy_term())
}

/// Description length in bits of `partition` on `g`.
pub fn map_equation(g: &SimilarityGraph, partition: &ClusterResult) -> Result<f64> {
    if partition.len() != g.node_count() {
        return Err(Error::Dimension(format!(
            "partition covers {} nodes, graph has {}",
            partition.len(),
            g.node_count()
        )));
    }
    partition.validate()?;
    let flow = Flow::from_graph(g)?;
    Ok(codelength_for_assignment(&flow, &partition.assignment, partition.num_clusters))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques() -> SimilarityGraph {
        let mut edges = Vec::new();
        for base in [0, 5] {
            for i in 0..5 {
                for j in i + 1..5 {
                    edges.push((base + i, base + j, 1.0));
                }
            }
        }
        edges.push((4, 5, 0.1));
        SimilarityGraph::from_edges(10, &edges).unwrap()
    }

    #[test]
    fn single_module_is_node_entropy() {
        let g = two_cliques();
        let one = ClusterResult { assignment: vec![0; 10], num_clusters: 1 };
        let flow = Flow::from_graph(&g).unwrap();
        let h: f64 = -flow.node_entropy_term();
        assert!((map_equation(&g, &one).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn one_edge_is_one_bit() {
        let g = SimilarityGraph::from_edges(2, &[(0, 1, 0.3)]).unwrap();
        let one = ClusterResult { assignment: vec![0, 0], num_clusters: 1 };
        assert!((map_equation(&g, &one).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn planted_split_beats_single_module() {
        let g = two_cliques();
        let one = ClusterResult { assignment: vec![0; 10], num_clusters: 1 };
        let two = ClusterResult::from_labels(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert!(map_equation(&g, &two).unwrap() < map_equation(&g, &one).unwrap());
    }

    #[test]
    fn relabel_and_scale_invariance() {
        let g = two_cliques();
        let a = ClusterResult::from_labels(&[0, 0, 1, 1, 1, 2, 2, 2, 3, 3]);
        let b = ClusterResult::from_labels(&[5, 5, 9, 9, 9, 1, 1, 1, 0, 0]);
        let la = map_equation(&g, &a).unwrap();
        assert!((la - map_equation(&g, &b).unwrap()).abs() < 1e-12);
        let scaled: Vec<_> = g.undirected_edges().map(|(i, j, w)| (i, j, 7.5 * w)).collect();
        let gs = SimilarityGraph::from_edges(10, &scaled).unwrap();
        assert!((la - map_equation(&gs, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_graphs() {
        let g = SimilarityGraph::empty(3);
        let p = ClusterResult::singletons(3);
        assert!(matches!(map_equation(&g, &p), Err(Error::DegenerateGraph(_))));
        let neg = SimilarityGraph::from_edges(2, &[(0, 1, -0.5)]).unwrap();
        assert!(matches!(map_equation(&neg, &ClusterResult::singletons(2)), Err(Error::DegenerateGraph(_))));
        assert!(matches!(map_equation(&two_cliques(), &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn disconnected_components_cost_nothing_to_separate() {
        let g = SimilarityGraph::from_edges(4, &[(0, 1, 1.0), (2, 3, 3.0)]).unwrap();
        let comps = ClusterResult::from_labels(&[0, 0, 1, 1]);
        // No exit flow, so only the within-module codebooks remain: 1 bit each.
        assert!((map_equation(&g, &comps).unwrap() - 1.0).abs() < 1e-12);
    }
}
