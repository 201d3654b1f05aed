//! Clustering of unlabelled features: cosine similarity graph, threshold
//! filtering, top-k pruning and Infomap.

mod graph;
mod infomap;
mod mapeq;

pub use graph::{build_graph, filter_edges, knn_prune, knn_similarity_graph, SimilarityGraph};
pub use infomap::{infomap, infomap_with_config, InfomapConfig, InfomapOutcome};
pub use mapeq::map_equation;

use crate::error::{Error, Result};
use crate::types::{ClusterResult, FeatureMatrix};

/// Cluster normalized features and return the partition with its cluster count.
pub fn estimate_k(features: &FeatureMatrix, tau_f: f64, k: usize, seed: u64) -> Result<ClusterResult> {
    estimate_k_with_config(features, tau_f, k, seed, &InfomapConfig::default())
}

pub fn estimate_k_with_config(
    features: &FeatureMatrix,
    tau_f: f64,
    k: usize,
    seed: u64,
    cfg: &InfomapConfig,
) -> Result<ClusterResult> {
    if features.is_empty() {
        return Err(Error::EmptyInput("no features to cluster".into()));
    }
    let g = knn_similarity_graph(features, tau_f, k)?;
    Ok(infomap_with_config(&g, seed, cfg).clusters)
}
