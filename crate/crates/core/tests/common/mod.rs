//! Independent oracles shared by the integration suites. Nothing here calls the
//! search code it is used to check.

#![allow(dead_code)]

use pnp_core::fastcluster::{map_equation, SimilarityGraph};
use pnp_core::ClusterResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Calls `f` with every set partition of `0..n` as a restricted growth string.
pub fn for_each_partition(n: usize, mut f: impl FnMut(&[usize], usize)) {
    fn rec(i: usize, n: usize, labels: &mut Vec<usize>, max: usize, f: &mut dyn FnMut(&[usize], usize)) {
        if i == n {
            f(labels, max);
            return;
        }
        for l in 0..=max {
            labels[i] = l;
            rec(i + 1, n, labels, if l == max { max + 1 } else { max }, f);
        }
    }
    if n == 0 {
        return;
    }
    let mut labels = vec![0; n];
    labels[0] = 0;
    rec(1, n, &mut labels, 1, &mut f);
}

/// Global minimum of the map equation over all partitions, by enumeration.
/// Nodes without edges are irrelevant to the codelength.
pub fn brute_force_min_codelength(g: &SimilarityGraph) -> f64 {
    let n = g.node_count();
    let mut best = f64::INFINITY;
    for_each_partition(n, |labels, count| {
        let p = ClusterResult {
            assignment: labels.to_vec(),
            num_clusters: count,
        };
        let l = map_equation(g, &p).unwrap();
        if l < best {
            best = l;
        }
    });
    best
}

pub fn random_graph(n: usize, density: f64, seed: u64) -> SimilarityGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                edges.push((i, j, rng.random_range(0.05..1.0)));
            }
        }
    }
    if edges.is_empty() && n >= 2 {
        edges.push((0, 1, 0.5));
    }
    SimilarityGraph::from_edges(n, &edges).unwrap()
}

pub fn ring_of_cliques(cliques: usize, size: usize, intra: f64, bridge: f64) -> SimilarityGraph {
    let mut edges = Vec::new();
    for c in 0..cliques {
        let base = c * size;
        for i in 0..size {
            for j in i + 1..size {
                edges.push((base + i, base + j, intra));
            }
        }
        let next = ((c + 1) % cliques) * size;
        edges.push((base + size - 1, next, bridge));
    }
    SimilarityGraph::from_edges(cliques * size, &edges).unwrap()
}

/// Two cliques of `size` joined by one edge of weight `bridge`.
pub fn two_cliques(size: usize, bridge: f64) -> SimilarityGraph {
    let mut edges = Vec::new();
    for base in [0, size] {
        for i in 0..size {
            for j in i + 1..size {
                edges.push((base + i, base + j, 1.0));
            }
        }
    }
    edges.push((size - 1, size, bridge));
    SimilarityGraph::from_edges(2 * size, &edges).unwrap()
}

/// The small-graph fixture set: seeded random graphs of 2..=10 nodes at three
/// densities plus planted clique structures.
pub fn small_graph_fixtures() -> Vec<(String, SimilarityGraph)> {
    let mut out = Vec::new();
    for n in 2..=10usize {
        for (d, density) in [0.3, 0.5, 0.8].into_iter().enumerate() {
            for rep in 0..6u64 {
                let seed = 1000 * n as u64 + 100 * d as u64 + rep;
                out.push((format!("random n={n} density={density} seed={seed}"), random_graph(n, density, seed)));
            }
        }
    }
    out.push(("two 5-cliques, weak bridge".into(), two_cliques(5, 0.1)));
    out.push(("two 4-cliques, strong bridge".into(), two_cliques(4, 0.9)));
    out.push(("ring of 3 triangles".into(), ring_of_cliques(3, 3, 0.9, 0.65)));
    out.push(("ring of 2 pentagons".into(), ring_of_cliques(2, 5, 0.9, 0.65)));
    out
}

/// Mixture of `classes` Gaussian classes split with half the classes old and
/// half of each old class labelled.
pub fn gcd_dataset(
    classes: usize,
    dim: usize,
    per_class: usize,
    sep: f64,
    noise: f64,
    seed: u64,
) -> pnp_core::datagen::GcdDataset {
    let pts = pnp_core::datagen::generate_mixture(classes, dim, per_class, sep, noise, 100 + seed).unwrap();
    pnp_core::datagen::split_gcd(&pts, 0.5, 0.5, 200 + seed).unwrap()
}

/// Brute-force minimum of `cost` over all assignments of the zero-padded square matrix.
pub fn brute_force_assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let r = cost.len();
    let c = cost.first().map_or(0, Vec::len);
    let n = r.max(c);
    let at = |i: usize, j: usize| if i < r && j < c { cost[i][j] } else { 0.0 };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| at(i, j)).sum();
        if total < best {
            best = total;
        }
    });
    best
}

/// Calls `f` with every permutation of `v[k..]` appended to `v[..k]`.
pub fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Largest number of instances any one-to-one cluster→class matching gets right,
/// by enumerating all matchings.
pub fn brute_force_matched_count(y_true: &[usize], y_pred: &[usize]) -> usize {
    let mut clusters: Vec<usize> = y_pred.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    let mut classes: Vec<usize> = y_true.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let n = clusters.len().max(classes.len());
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits = y_true
            .iter()
            .zip(y_pred)
            .filter(|&(&t, &c)| {
                let ci = clusters.binary_search(&c).unwrap();
                classes.get(p[ci]) == Some(&t)
            })
            .count();
        best = best.max(hits);
    });
    best
}
