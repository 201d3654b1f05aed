use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize_rows, Matrix, DEFAULT_NORM_EPS};

/// Row embeddings plus whether every row is known to have unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    matrix: Matrix,
    normalized: bool,
}

impl FeatureMatrix {
    /// Normalizes every row; fails on rows with (near) zero norm.
    pub fn normalize(matrix: &Matrix) -> Result<Self> {
        Ok(FeatureMatrix {
            matrix: l2_normalize_rows(matrix, DEFAULT_NORM_EPS)?,
            normalized: true,
        })
    }

    /// Wraps rows as-is, without a normalization guarantee.
    pub fn raw(matrix: Matrix) -> Self {
        FeatureMatrix {
            matrix,
            normalized: false,
        }
    }

    /// Wraps rows that the caller asserts are unit norm; verified to `tol`.
    pub fn assume_normalized(matrix: Matrix, tol: f64) -> Result<Self> {
        for (i, r) in matrix.row_iter().enumerate() {
            let n = dot(r, r).sqrt();
            if (n - 1.0).abs() > tol {
                return Err(Error::Contract(format!("row {i} has norm {n}, expected 1")));
            }
        }
        Ok(FeatureMatrix {
            matrix,
            normalized: true,
        })
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            matrix: self.matrix.select_rows(indices),
            normalized: self.normalized,
        }
    }
}

/// A partition of nodes into clusters with ids `0..num_clusters`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub assignment: Vec<usize>,
    pub num_clusters: usize,
}

impl ClusterResult {
    /// Relabels arbitrary ids to `0..K` in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let assignment = labels
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        ClusterResult {
            assignment,
            num_clusters: map.len(),
        }
    }

    pub fn singletons(n: usize) -> Self {
        ClusterResult {
            assignment: (0..n).collect(),
            num_clusters: n,
        }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Checks the contiguous-id invariant.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.num_clusters];
        for (i, &c) in self.assignment.iter().enumerate() {
            if c >= self.num_clusters {
                return Err(Error::Contract(format!(
                    "node {i} assigned to cluster {c} of {}",
                    self.num_clusters
                )));
            }
            seen[c] = true;
        }
        if let Some(empty) = seen.iter().position(|&s| !s) {
            return Err(Error::Contract(format!("cluster {empty} has no members")));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_clusters];
        for (i, &c) in self.assignment.iter().enumerate() {
            members[c].push(i);
        }
        members
    }
}
