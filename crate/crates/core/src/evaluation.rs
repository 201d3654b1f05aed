//! Cluster-accuracy evaluation under the optimal cluster-to-class matching,
//! old/new error diagnostics, and clustering wall-time measurement.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fastcluster::{estimate_k_with_config, InfomapConfig};
use crate::numerics::Matrix;
use crate::types::FeatureMatrix;

/// Optimal assignment of a rectangular cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row; `None` when the row went to a padding column.
    pub row_to_col: Vec<Option<usize>>,
    pub cost: f64,
}

/// Minimum-cost one-to-one assignment on the zero-padded square version of
/// `cost`, by the shortest augmenting path method with potentials.
pub fn hungarian(cost: &Matrix) -> Result<Assignment> {
    let (r, c) = cost.shape();
    if r == 0 || c == 0 {
        return Err(Error::EmptyInput("empty cost matrix".into()));
    }
    if !cost.is_finite() {
        return Err(Error::Numeric("cost matrix has non-finite entries".into()));
    }
    let n = r.max(c);
    let at = |i: usize, j: usize| if i < r && j < c { cost.row(i)[j] } else { 0.0 };

    // 1-based arrays; p[j] is the row matched to column j, row 0 is virtual.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![None; r];
    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j] - 1;
        if i < r && j - 1 < c {
            row_to_col[i] = Some(j - 1);
            total += cost.row(i)[j - 1];
        }
    }
    Ok(Assignment { row_to_col, cost: total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_all: f64,
    /// Accuracy over instances of old classes; 0 when there are none.
    pub acc_old: f64,
    /// Accuracy over instances of new classes; 0 when there are none.
    pub acc_new: f64,
    /// Number of distinct predicted clusters.
    pub k_e: usize,
    pub num_classes: usize,
    pub num_instances: usize,
    pub num_old: usize,
    pub num_new: usize,
    /// Matched class of each predicted cluster id; `None` for a surplus cluster.
    pub matching: BTreeMap<usize, Option<usize>>,
    /// Sorted predicted cluster ids, the rows of `contingency`.
    pub cluster_ids: Vec<usize>,
    /// Sorted true class ids, the columns of `contingency`.
    pub class_ids: Vec<usize>,
    pub contingency: Vec<Vec<usize>>,
}

fn sorted_unique(xs: &[usize]) -> Vec<usize> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Accuracy under the single matching of predicted clusters to true classes
/// that maximizes the number of correctly assigned instances.
pub fn clustering_accuracy(y_true: &[usize], y_pred: &[usize], old_classes: &[usize]) -> Result<EvalReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} true labels and {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput("no instances to evaluate".into()));
    }
    let cluster_ids = sorted_unique(y_pred);
    let class_ids = sorted_unique(y_true);
    let row_of: BTreeMap<usize, usize> = cluster_ids.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let col_of: BTreeMap<usize, usize> = class_ids.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let mut counts = vec![vec![0usize; class_ids.len()]; cluster_ids.len()];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        counts[row_of[&p]][col_of[&t]] += 1;
    }
    let neg = Matrix::from_vec(
        cluster_ids.len(),
        class_ids.len(),
        counts.iter().flatten().map(|&n| -(n as f64)).collect(),
    )?;
    let a = hungarian(&neg)?;
    let matching: BTreeMap<usize, Option<usize>> = cluster_ids
        .iter()
        .zip(&a.row_to_col)
        .map(|(&k, col)| (k, col.map(|c| class_ids[c])))
        .collect();

    let is_old = |c: usize| old_classes.contains(&c);
    let (mut correct, mut correct_old, mut correct_new, mut num_old) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let hit = matching[&p] == Some(t);
        let old = is_old(t);
        num_old += old as usize;
        if hit {
            correct += 1;
            if old {
                correct_old += 1;
            } else {
                correct_new += 1;
            }
        }
    }
    let m = y_true.len();
    let num_new = m - num_old;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EvalReport {
        acc_all: ratio(correct, m),
        acc_old: ratio(correct_old, num_old),
        acc_new: ratio(correct_new, num_new),
        k_e: cluster_ids.len(),
        num_classes: class_ids.len(),
        num_instances: m,
        num_old,
        num_new,
        matching,
        cluster_ids,
        class_ids,
        contingency: counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    /// New-class instance matched to an old class.
    pub false_old: usize,
    /// Old-class instance matched to a new class.
    pub false_new: usize,
    /// Old-class instance matched to a different old class.
    pub true_old: usize,
    /// New-class instance matched to a different new class.
    pub true_new: usize,
    pub misclassified: usize,
    /// Per true class: (class id, correctly assigned, actual count).
    pub per_class: Vec<(usize, usize, usize)>,
    /// Mean over classes of `|correct − actual|`.
    pub intra_class_bias: f64,
}

/// Splits the errors of a matched clustering by the old/new membership of the
/// true class and of the matched class. A surplus cluster matched to no class
/// counts as matched to a new class.
pub fn bias_report(
    y_true: &[usize],
    y_pred: &[usize],
    matching: &BTreeMap<usize, Option<usize>>,
    old_classes: &[usize],
) -> Result<BiasReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension("label vectors differ in length".into()));
    }
    let is_old = |c: usize| old_classes.contains(&c);
    let mut tallies: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let (mut fo, mut fn_, mut to, mut tn) = (0, 0, 0, 0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let matched = *matching
            .get(&p)
            .ok_or_else(|| Error::Contract(format!("matching has no entry for cluster {p}")))?;
        let entry = tallies.entry(t).or_default();
        entry.1 += 1;
        if matched == Some(t) {
            entry.0 += 1;
            continue;
        }
        let matched_old = matched.is_some_and(is_old);
        match (is_old(t), matched_old) {
            (true, true) => to += 1,
            (true, false) => fn_ += 1,
            (false, true) => fo += 1,
            (false, false) => tn += 1,
        }
    }
    let per_class: Vec<(usize, usize, usize)> = tallies.into_iter().map(|(c, (ok, n))| (c, ok, n)).collect();
    let intra_class_bias = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|&(_, ok, n)| (n - ok) as f64).sum::<f64>() / per_class.len() as f64
    };
    Ok(BiasReport {
        false_old: fo,
        false_new: fn_,
        true_old: to,
        true_new: tn,
        misclassified: fo + fn_ + to + tn,
        per_class,
        intra_class_bias,
    })
}

/// Median clustering wall times of the full and the unlabelled-only features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchTiming {
    pub full_ms: f64,
    pub unlabelled_ms: f64,
    pub repeats: usize,
}

impl BenchTiming {
    /// `full_ms / unlabelled_ms`
    pub fn speedup(&self) -> f64 {
        self.full_ms / self.unlabelled_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub tau_f: f64,
    pub knn_k: usize,
    pub seed: u64,
    pub repeats: usize,
    pub infomap: InfomapConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            tau_f: 0.6,
            knn_k: 10,
            seed: 0,
            repeats: 5,
            infomap: InfomapConfig::default(),
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Median wall time in milliseconds of clustering `features`, measured on a
/// single worker thread.
pub fn time_clustering(features: &FeatureMatrix, cfg: &BenchConfig) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptyInput("no rows to time".into()));
    }
    if cfg.repeats == 0 {
        return Err(Error::Parameter("need at least one repeat".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot build timing thread pool: {e}")))?;
    pool.install(|| {
        let mut times = Vec::with_capacity(cfg.repeats);
        for _ in 0..cfg.repeats {
            let start = Instant::now();
            estimate_k_with_config(features, cfg.tau_f, cfg.knn_k, cfg.seed, &cfg.infomap)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        Ok(median(times))
    })
}

/// Times clustering of the full set against the unlabelled rows alone.
pub fn bench_clustering(full: &FeatureMatrix, unlabelled: &FeatureMatrix, cfg: &BenchConfig) -> Result<BenchTiming> {
    Ok(BenchTiming {
        full_ms: time_clustering(full, cfg)?,
        unlabelled_ms: time_clustering(unlabelled, cfg)?,
        repeats: cfg.repeats,
    })
}
