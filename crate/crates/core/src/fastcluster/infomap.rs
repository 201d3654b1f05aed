//! Two-level Infomap: seeded local moves of nodes between modules, module
//! aggregation, and repeated fine-tuning from the best partition found, with
//! several independent restarts.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::graph::SimilarityGraph;
use super::mapeq::{codelength_for_assignment, plogp, Flow};
use crate::seeding::rng_for;
use crate::types::ClusterResult;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfomapConfig {
    /// Independent searches; the lowest codelength wins, ties go to the earliest.
    pub restarts: usize,
    /// Upper bound on sweeps over all nodes within one local-move phase.
    pub max_sweeps: usize,
    /// A move or a tuning round must improve the codelength by more than this (bits).
    pub min_improvement: f64,
    /// Upper bound on fine-tune/aggregate rounds per restart.
    pub max_tune_rounds: usize,
}

impl Default for InfomapConfig {
    fn default() -> Self {
        InfomapConfig {
            restarts: 8,
            max_sweeps: 200,
            min_improvement: 1e-12,
            max_tune_rounds: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfomapOutcome {
    pub clusters: ClusterResult,
    /// Codelength in bits; `None` when the graph carries no flow.
    pub codelength: Option<f64>,
}

/// One level of the search: nodes with visit rates and symmetric flows to other
/// nodes at the same level. Flow internal to a node is dropped; it never exits.
#[derive(Debug, Clone)]
struct Level {
    visit: Vec<f64>,
    edges: Vec<Vec<(usize, f64)>>,
    out: Vec<f64>,
}

impl Level {
    fn new(visit: Vec<f64>, edges: Vec<Vec<(usize, f64)>>) -> Self {
        let out = edges.iter().map(|l| l.iter().map(|&(_, f)| f).sum()).collect();
        Level { visit, edges, out }
    }

    fn len(&self) -> usize {
        self.visit.len()
    }

    /// Collapses each module into a node. `modules` must use ids `0..count`.
    fn aggregate(&self, modules: &[usize], count: usize) -> Level {
        let mut visit = vec![0.0; count];
        let mut triplets = Vec::new();
        for (i, &m) in modules.iter().enumerate() {
            visit[m] += self.visit[i];
            for &(j, f) in &self.edges[i] {
                let mj = modules[j];
                if mj != m {
                    triplets.push((m, mj, f));
                }
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); count];
        for (a, b, f) in triplets {
            match edges[a].last_mut() {
                Some((last, acc)) if *last == b => *acc += f,
                _ => edges[a].push((b, f)),
            }
        }
        Level::new(visit, edges)
    }
}

/// Renumbers ids to `0..count` by first appearance.
fn compact(ids: &[usize]) -> (Vec<usize>, usize) {
    let r = ClusterResult::from_labels(ids);
    (r.assignment, r.num_clusters)
}

/// Mutable module bookkeeping for local moves on one level.
struct ModuleState {
    module: Vec<usize>,
    exit: Vec<f64>,
    visit: Vec<f64>,
    size: Vec<usize>,
    total_exit: f64,
    free: Vec<usize>,
}

impl ModuleState {
    fn new(level: &Level, init: &[usize]) -> Self {
        let n = level.len();
        let mut exit = vec![0.0; n];
        let mut visit = vec![0.0; n];
        let mut size = vec![0; n];
        for (i, &m) in init.iter().enumerate() {
            visit[m] += level.visit[i];
            size[m] += 1;
            for &(j, f) in &level.edges[i] {
                if init[j] != m {
                    exit[m] += f;
                }
            }
        }
        let free = (0..n).rev().filter(|&m| size[m] == 0).collect();
        ModuleState {
            module: init.to_vec(),
            total_exit: exit.iter().sum(),
            exit,
            visit,
            size,
            free,
        }
    }

    /// Codelength change of moving a node (visit `p`, exit `out`) from module `a`
    /// (with flow `a_in` to the rest of `a`) to module `b` (flow `b_in`).
    #[allow(clippy::too_many_arguments)]
    fn delta(&self, p: f64, out: f64, a: usize, a_in: f64, b: Option<usize>, b_in: f64) -> f64 {
        let (qa, pa) = (self.exit[a], self.visit[a]);
        let (qb, pb) = b.map_or((0.0, 0.0), |b| (self.exit[b], self.visit[b]));
        let qa2 = (qa - out + 2.0 * a_in).max(0.0);
        let pa2 = (pa - p).max(0.0);
        let qb2 = (qb + out - 2.0 * b_in).max(0.0);
        let pb2 = pb + p;
        let total2 = self.total_exit - qa - qb + qa2 + qb2;
        (plogp(total2) - plogp(self.total_exit))
            - 2.0 * (plogp(qa2) + plogp(qb2) - plogp(qa) - plogp(qb))
            + (plogp(qa2 + pa2) + plogp(qb2 + pb2) - plogp(qa + pa) - plogp(qb + pb))
    }

    fn apply(&mut self, i: usize, p: f64, out: f64, a: usize, a_in: f64, b: usize, b_in: f64) {
        let qa2 = (self.exit[a] - out + 2.0 * a_in).max(0.0);
        let qb2 = (self.exit[b] + out - 2.0 * b_in).max(0.0);
        self.total_exit += qa2 - self.exit[a] + qb2 - self.exit[b];
        self.exit[a] = qa2;
        self.exit[b] = qb2;
        self.visit[a] = (self.visit[a] - p).max(0.0);
        self.visit[b] += p;
        self.size[a] -= 1;
        self.size[b] += 1;
        if self.size[a] == 0 {
            self.exit[a] = 0.0;
            self.visit[a] = 0.0;
            self.free.push(a);
        }
        self.module[i] = b;
    }
}

/// Greedy single-node moves starting from `init`. Returns module ids in `0..n`.
fn local_moves(level: &Level, init: &[usize], rng: &mut ChaCha8Rng, cfg: &InfomapConfig) -> Vec<usize> {
    let n = level.len();
    let mut state = ModuleState::new(level, init);
    let mut order: Vec<usize> = (0..n).collect();
    let mut flow_to = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    for _ in 0..cfg.max_sweeps {
        order.shuffle(rng);
        let mut moved = 0;
        for &i in &order {
            let a = state.module[i];
            for &(j, f) in &level.edges[i] {
                let m = state.module[j];
                if flow_to[m] == 0.0 {
                    touched.push(m);
                }
                flow_to[m] += f;
            }
            touched.sort_unstable();
            touched.dedup();
            let a_in = flow_to[a];
            let (p, out) = (level.visit[i], level.out[i]);

            let mut best: Option<(Option<usize>, f64, f64)> = None;
            for &b in touched.iter().filter(|&&b| b != a) {
                let d = state.delta(p, out, a, a_in, Some(b), flow_to[b]);
                if best.is_none_or(|(_, bd, _)| d < bd) {
                    best = Some((Some(b), d, flow_to[b]));
                }
            }
            if state.size[a] > 1 && !state.free.is_empty() {
                let d = state.delta(p, out, a, a_in, None, 0.0);
                if best.is_none_or(|(_, bd, _)| d < bd) {
                    best = Some((None, d, 0.0));
                }
            }
            if let Some((target, d, b_in)) = best {
                if d < -cfg.min_improvement {
                    let b = target.unwrap_or_else(|| state.free.pop().expect("a free module exists"));
                    state.apply(i, p, out, a, a_in, b, b_in);
                    moved += 1;
                }
            }
            for &m in &touched {
                flow_to[m] = 0.0;
            }
            touched.clear();
        }
        if moved == 0 {
            break;
        }
    }
    state.module
}

/// Repeated local moves and aggregation starting from the modules in `init`
/// (base-node ids). Returns compact base-node module ids.
fn coarsen(base: &Level, init: &[usize], rng: &mut ChaCha8Rng, cfg: &InfomapConfig) -> Vec<usize> {
    let (mut node_map, count) = compact(init);
    let mut level = base.aggregate(&node_map, count);
    loop {
        let singletons: Vec<usize> = (0..level.len()).collect();
        let moved = local_moves(&level, &singletons, rng, cfg);
        let (modules, count) = compact(&moved);
        if count == level.len() {
            return node_map;
        }
        for m in node_map.iter_mut() {
            *m = modules[*m];
        }
        level = level.aggregate(&modules, count);
    }
}

fn single_search(base: &Level, flow: &Flow, rng: &mut ChaCha8Rng, cfg: &InfomapConfig) -> (Vec<usize>, f64) {
    let n = base.len();
    let eval = |a: &[usize]| {
        let (c, k) = compact(a);
        codelength_for_assignment(flow, &c, k)
    };
    let mut best: Vec<usize> = coarsen(base, &(0..n).collect::<Vec<_>>(), rng, cfg);
    let mut best_len = eval(&best);
    for _ in 0..cfg.max_tune_rounds {
        // Fine-tune: let single nodes leave the modules found so far, then merge again.
        let tuned = local_moves(base, &best, rng, cfg);
        let candidate = coarsen(base, &tuned, rng, cfg);
        let len = eval(&candidate);
        if len < best_len - cfg.min_improvement {
            best = candidate;
            best_len = len;
        } else {
            break;
        }
    }
    (best, best_len)
}

/// Finds a low-codelength partition of `g`. Nodes without edges become
/// singleton clusters; negative edge weights are ignored.
pub fn infomap_with_config(g: &SimilarityGraph, seed: u64, cfg: &InfomapConfig) -> InfomapOutcome {
    let n = g.node_count();
    let positive: Vec<(usize, usize, f64)> = g.undirected_edges().filter(|&(_, _, w)| w > 0.0).collect();
    let filtered;
    let g = if positive.len() == g.edge_count() {
        g
    } else {
        filtered = SimilarityGraph::from_edges(n, &positive).expect("edges come from a valid graph");
        &filtered
    };
    let Ok(flow) = Flow::from_graph(g) else {
        return InfomapOutcome {
            clusters: ClusterResult::singletons(n),
            codelength: None,
        };
    };

    // Search only over nodes that carry flow.
    let active: Vec<usize> = (0..n).filter(|&i| flow.node[i] > 0.0).collect();
    let mut local_id = vec![usize::MAX; n];
    for (k, &i) in active.iter().enumerate() {
        local_id[i] = k;
    }
    let sub_flow = Flow {
        node: active.iter().map(|&i| flow.node[i]).collect(),
        edges: active
            .iter()
            .map(|&i| flow.edges[i].iter().map(|&(j, f)| (local_id[j], f)).collect())
            .collect(),
    };
    let base = Level::new(sub_flow.node.clone(), sub_flow.edges.clone());

    let restarts = cfg.restarts.max(1);
    let runs: Vec<(Vec<usize>, f64)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(&[seed, r as u64]);
            single_search(&base, &sub_flow, &mut rng, cfg)
        })
        .collect();

    // The one-module solution is always a candidate.
    let one = vec![0; active.len()];
    let mut best = (one.clone(), codelength_for_assignment(&sub_flow, &one, 1));
    for run in runs {
        if run.1 < best.1 - cfg.min_improvement {
            best = run;
        }
    }

    let mut labels: Vec<usize> = (0..n).map(|i| n + i).collect();
    for (k, &i) in active.iter().enumerate() {
        labels[i] = best.0[k];
    }
    InfomapOutcome {
        clusters: ClusterResult::from_labels(&labels),
        codelength: Some(best.1),
    }
}

/// Infomap with the default configuration (8 restarts).
pub fn infomap(g: &SimilarityGraph, seed: u64) -> ClusterResult {
    infomap_with_config(g, seed, &InfomapConfig::default()).clusters
}
