//! Training loop: per-epoch clustering of the unlabelled features, buffer
//! initialization, mini-batch SGD on the student with an EMA teacher, and
//! write-back of the potential prototypes.

mod checkpoint;
mod config;
mod objective;
mod schedule;
mod state;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{LossToggles, OmegaForm, PotentialMode, TrainConfig};
pub use objective::{compute_objective, Batch};
pub use schedule::{lr_schedule, omega_schedule, omega_schedule_with_form, tau_t_schedule};
pub use state::ProberState;

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{augment, GcdDataset, ViewSeed};
use crate::error::{Error, Result};
use crate::fastcluster::{estimate_k_with_config, InfomapConfig};
use crate::numerics::{GradientTape, Matrix, ParamId};
use crate::objectives::LossBreakdown;
use crate::prototypes::cluster_prototypes;
use crate::seeding::{derive_seed, rng_for};
use crate::types::{ClusterResult, FeatureMatrix};
use state::{SEED_AUGMENT, SEED_CLUSTER, SEED_SHUFFLE};

/// Losses above this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Dataset rows prepared for training.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub labelled: Matrix,
    /// Index into the sorted old classes for each labelled row.
    pub labels: Vec<usize>,
    pub unlabelled: Matrix,
    pub num_labelled_classes: usize,
}

impl TrainingData {
    pub fn from_dataset(ds: &GcdDataset) -> Result<Self> {
        let labels = ds
            .labelled
            .iter()
            .map(|inst| {
                ds.old_class_index(inst.class)
                    .ok_or_else(|| Error::Validation(format!("labelled class {} is not an old class", inst.class)))
            })
            .collect::<Result<Vec<_>>>()?;
        if ds.labelled.is_empty() || ds.unlabelled.is_empty() {
            return Err(Error::EmptyInput("training needs labelled and unlabelled rows".into()));
        }
        Ok(TrainingData {
            labelled: ds.labelled_matrix(),
            labels,
            unlabelled: ds.unlabelled_matrix(),
            num_labelled_classes: ds.old_classes.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.unlabelled.cols()
    }
}

/// Per-epoch record of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean over the epoch's steps.
    pub losses: LossBreakdown,
    pub k_e: usize,
    pub omega: f64,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    pub tau_t: f64,
    pub steps: usize,
    /// Wall time of the clustering call; the only non-deterministic field.
    pub cluster_ms: f64,
    /// Total loss of every step, in order.
    #[serde(skip)]
    pub step_totals: Vec<f64>,
}

/// Number of batches per epoch: enough for the target batch size, while every
/// batch keeps at least one labelled and one unlabelled row.
pub fn batches_per_epoch(num_labelled: usize, num_unlabelled: usize, batch_size: usize) -> usize {
    let total = num_labelled + num_unlabelled;
    total.div_ceil(batch_size.max(1)).min(num_labelled).min(num_unlabelled).max(1)
}

fn chunks(indices: &[usize], parts: usize) -> Vec<&[usize]> {
    let n = indices.len();
    (0..parts).map(|p| &indices[p * n / parts..(p + 1) * n / parts]).collect()
}

/// Shuffled row indices of each batch as (labelled, unlabelled) pairs.
pub fn epoch_batches(data: &TrainingData, cfg: &TrainConfig, epoch: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let (n, m) = (data.labelled.rows(), data.unlabelled.rows());
    let mut rng = rng_for(&[cfg.seed, SEED_SHUFFLE, epoch as u64]);
    let mut lab: Vec<usize> = (0..n).collect();
    let mut unl: Vec<usize> = (0..m).collect();
    lab.shuffle(&mut rng);
    unl.shuffle(&mut rng);
    let nb = batches_per_epoch(n, m, cfg.batch_size);
    chunks(&lab, nb)
        .into_iter()
        .zip(chunks(&unl, nb))
        .map(|(l, u)| (l.to_vec(), u.to_vec()))
        .collect()
}

/// Augments the selected rows into a batch. Unlabelled rows are indexed after
/// the labelled ones so every instance has its own view stream.
pub fn make_batch(data: &TrainingData, lab: &[usize], unl: &[usize], cfg: &TrainConfig, epoch: usize) -> Result<Batch> {
    let d = data.dim();
    let rows = lab.len() + unl.len();
    let mut v1 = Vec::with_capacity(rows * d);
    let mut v2 = Vec::with_capacity(rows * d);
    let seed = derive_seed(&[cfg.seed, SEED_AUGMENT]);
    let sources = lab
        .iter()
        .map(|&i| (data.labelled.row(i), i))
        .chain(unl.iter().map(|&j| (data.unlabelled.row(j), data.labelled.rows() + j)));
    for (x, index) in sources {
        let pair = augment(
            x,
            cfg.aug_noise_sd,
            cfg.dropout_p,
            ViewSeed {
                seed,
                epoch: epoch as u64,
                index: index as u64,
            },
        )?;
        v1.extend(pair.view1);
        v2.extend(pair.view2);
    }
    Ok(Batch {
        view1: Matrix::from_vec(rows, d, v1)?,
        view2: Matrix::from_vec(rows, d, v2)?,
        labels: lab.iter().map(|&i| data.labels[i]).collect(),
    })
}

/// Student features of `x`, unit-normalized for clustering.
pub fn encode(state: &ProberState, x: &Matrix) -> Result<FeatureMatrix> {
    FeatureMatrix::normalize(&state.student.infer(x)?)
}

fn infomap_config(cfg: &TrainConfig) -> InfomapConfig {
    InfomapConfig {
        restarts: cfg.infomap_restarts,
        ..InfomapConfig::default()
    }
}

/// Clusters `x` with the student encoder only.
pub fn infer(state: &ProberState, x: &Matrix, cfg: &TrainConfig) -> Result<ClusterResult> {
    if x.rows() == 0 {
        return Err(Error::EmptyInput("no rows to cluster".into()));
    }
    let f = encode(state, x)?;
    estimate_k_with_config(&f, cfg.tau_f, cfg.knn_k, derive_seed(&[cfg.seed, SEED_CLUSTER]), &infomap_config(cfg))
}

/// Clusters the unlabelled rows and sets up the epoch's memory buffers.
pub fn prepare_epoch(state: &mut ProberState, data: &TrainingData, cfg: &TrainConfig, epoch: usize) -> Result<(ClusterResult, f64)> {
    let features = encode(state, &data.unlabelled)?;
    let start = Instant::now();
    let clusters = estimate_k_with_config(
        &features,
        cfg.tau_f,
        cfg.knn_k,
        derive_seed(&[cfg.seed, SEED_CLUSTER, epoch as u64]),
        &infomap_config(cfg),
    )?;
    let cluster_ms = start.elapsed().as_secs_f64() * 1e3;
    state.bank.set_cluster_prototypes(cluster_prototypes(&features, &clusters)?)?;
    let (s, t) = match cfg.potential_mode {
        PotentialMode::Disabled => state.bank.init_cluster_only_buffers(epoch)?,
        _ => state.bank.init_buffers(epoch)?,
    };
    state.student_buffer = Some(s);
    state.teacher_buffer = Some(t);
    state.velocity.remove(ParamId::StudentBuffer);
    Ok((clusters, cluster_ms))
}

fn check_losses(l: &LossBreakdown, epoch: usize, step: usize) -> Result<()> {
    let all = [l.l_cru, l.l_crl, l.l_sup, l.l_unsup, l.total, l.regularizer];
    if all.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        return Err(Error::Divergence {
            epoch,
            step,
            detail: format!("{l:?}"),
        });
    }
    Ok(())
}

/// Updated parameters must stay finite and below the divergence limit.
fn check_params(state: &ProberState, tape: &GradientTape, epoch: usize, step: usize) -> Result<()> {
    for &id in tape.iter().map(|(id, _)| id) {
        let Some(p) = state.param(id) else { continue };
        if p.as_slice().iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                epoch,
                step,
                detail: format!("parameter {id:?} left the finite range"),
            });
        }
    }
    Ok(())
}

/// Drops gradient entries the configuration keeps fixed.
fn mask_gradients(state: &ProberState, tape: &mut GradientTape, cfg: &TrainConfig) {
    if cfg.train_last_layer_only {
        let last = state.student.layers.len() - 1;
        for l in 0..last {
            tape.remove(ParamId::EncoderWeight(l));
            tape.remove(ParamId::EncoderBias(l));
        }
    }
    let Some(buf) = &state.student_buffer else { return };
    let Some(g) = tape.get_mut(ParamId::StudentBuffer) else { return };
    let mut zero_rows = |from: usize, to: usize| {
        for r in from..to {
            g.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
        }
    };
    if cfg.freeze_cluster_slots {
        zero_rows(0, buf.cluster_slots);
    }
    if cfg.potential_mode == PotentialMode::Frozen {
        zero_rows(buf.cluster_slots, buf.len());
    }
}

/// One momentum SGD update: `v ← μ·v + g`, `p ← p − lr·v`.
pub fn sgd_step(state: &mut ProberState, tape: &GradientTape, lr: f64, momentum: f64) -> Result<()> {
    for (&id, g) in tape.iter() {
        if id.is_teacher() {
            return Err(Error::Contract(format!("gradient for teacher parameter {id:?}")));
        }
        let v = match state.velocity.get_mut(id) {
            Some(v) => {
                *v = v.scale(momentum);
                v.add_assign(g)?;
                v.clone()
            }
            None => {
                state.velocity.accumulate(id, g.clone())?;
                g.clone()
            }
        };
        let p = state
            .param_mut(id)
            .ok_or_else(|| Error::Contract(format!("no parameter {id:?}")))?;
        p.axpy(-lr, &v)?;
    }
    Ok(())
}

/// Runs one full epoch and advances `state.epoch`.
pub fn train_epoch(state: &mut ProberState, data: &TrainingData, cfg: &TrainConfig, epoch: usize) -> Result<EpochMetrics> {
    let (clusters, cluster_ms) = prepare_epoch(state, data, cfg, epoch)?;
    let omega = omega_schedule_with_form(epoch.min(cfg.epochs), cfg.epochs, cfg.omega_min, cfg.omega_max, cfg.omega_form)?;
    let tau_t = tau_t_schedule(epoch, cfg.tau_t_warmup_epochs, cfg.tau_t_start, cfg.tau_t_end);
    let batches = epoch_batches(data, cfg, epoch);
    let steps = batches.len();
    let total_steps = steps * cfg.epochs;

    let mut sum = LossBreakdown::default();
    let mut step_totals = Vec::with_capacity(steps);
    let mut first_lr = None;
    for (s, (lab, unl)) in batches.iter().enumerate() {
        let lr = lr_schedule(epoch * steps + s, total_steps, cfg.lr);
        first_lr.get_or_insert(lr);
        let batch = make_batch(data, lab, unl, cfg, epoch)?;
        let (losses, mut tape) = compute_objective(state, &batch, cfg, tau_t)?;
        check_losses(&losses, epoch, s)?;
        mask_gradients(state, &mut tape, cfg);
        sgd_step(state, &tape, lr, cfg.momentum)?;
        check_params(state, &tape, epoch, s)?;
        state.ema_update(omega)?;
        add_breakdown(&mut sum, &losses);
        step_totals.push(losses.total);
    }

    if cfg.potential_mode == PotentialMode::Trainable {
        if let Some(buf) = &state.student_buffer {
            state.bank.write_back(buf)?;
        }
    }
    state.epoch = epoch + 1;
    let metrics = EpochMetrics {
        epoch,
        losses: scale_breakdown(&sum, 1.0 / steps as f64),
        k_e: clusters.num_clusters,
        omega,
        lr: first_lr.unwrap_or(0.0),
        tau_t,
        steps,
        cluster_ms,
        step_totals,
    };
    debug!("epoch {epoch}: {:?}", metrics.losses);
    info!("epoch {epoch}: K^e = {}, total loss {:.4}", metrics.k_e, metrics.losses.total);
    Ok(metrics)
}

fn add_breakdown(acc: &mut LossBreakdown, l: &LossBreakdown) {
    acc.l_cru += l.l_cru;
    acc.l_crl += l.l_crl;
    acc.l_cr += l.l_cr;
    acc.l_sup += l.l_sup;
    acc.l_unsup += l.l_unsup;
    acc.l_ir += l.l_ir;
    acc.total += l.total;
    acc.regularizer += l.regularizer;
}

fn scale_breakdown(l: &LossBreakdown, s: f64) -> LossBreakdown {
    LossBreakdown {
        l_cru: l.l_cru * s,
        l_crl: l.l_crl * s,
        l_cr: l.l_cr * s,
        l_sup: l.l_sup * s,
        l_unsup: l.l_unsup * s,
        l_ir: l.l_ir * s,
        total: l.total * s,
        regularizer: l.regularizer * s,
    }
}

/// Trains from scratch for `cfg.epochs` epochs, calling `observe` after each.
pub fn train<F>(data: &TrainingData, cfg: &TrainConfig, mut observe: F) -> Result<ProberState>
where
    F: FnMut(&EpochMetrics, &ProberState) -> Result<()>,
{
    let mut state = ProberState::new(data.dim(), data.num_labelled_classes, cfg)?;
    for epoch in 0..cfg.epochs {
        let m = train_epoch(&mut state, data, cfg, epoch)?;
        observe(&m, &state)?;
    }
    Ok(state)
}

/// A metrics record as one JSON line, optionally without the timing field.
pub fn metrics_json(m: &EpochMetrics, include_timing: bool) -> String {
    let mut v = serde_json::to_value(m).expect("metrics serialize");
    if !include_timing {
        if let Some(obj) = v.as_object_mut() {
            obj.remove("cluster_ms");
        }
    }
    v.to_string()
}
