use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which reading of the EMA momentum ramp to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OmegaForm {
    /// `ω_max − (1−ω_min)·(cos(πt/T)+1)/2`, rising from `ω_max−(1−ω_min)` to `ω_max`.
    Corrected,
    /// `ω_max − (1−ω_min)·cos(πt/T + 1)/2`, clamped into `[0, 1]`.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PotentialMode {
    /// Potential slots train with the buffer and are written back to the pool.
    Trainable,
    /// Potential slots take part in predictions but receive no updates.
    Frozen,
    /// Buffers hold the cluster prototypes only.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub cru: bool,
    pub crl: bool,
    pub sup: bool,
    pub unsup: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles {
            cru: true,
            crl: true,
            sup: true,
            unsup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Student temperature.
    pub tau: f64,
    pub tau_t_start: f64,
    pub tau_t_end: f64,
    pub tau_t_warmup_epochs: usize,
    /// Instance-loss temperature.
    pub tau_r: f64,
    /// Edge filter threshold for the similarity graph.
    pub tau_f: f64,
    /// Weight of the mean-entropy regularizer.
    pub gamma: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub omega_form: OmegaForm,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// `K^t = buffer_multiplier · |Y^l|`
    pub buffer_multiplier: usize,
    /// Neighbors kept per node in the similarity graph.
    pub knn_k: usize,
    pub encoder_hidden: usize,
    pub feature_dim: usize,
    pub head_hidden: usize,
    pub proj_dim: usize,
    pub aug_noise_sd: f64,
    pub dropout_p: f64,
    pub normalize_features: bool,
    pub cross_view_denominator: bool,
    pub train_last_layer_only: bool,
    pub potential_mode: PotentialMode,
    pub freeze_cluster_slots: bool,
    pub losses: LossToggles,
    pub seed: u64,
    pub infomap_restarts: usize,
    /// Save a checkpoint every this many epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.1,
            tau_t_start: 0.07,
            tau_t_end: 0.04,
            tau_t_warmup_epochs: 30,
            tau_r: 1.0,
            tau_f: 0.6,
            gamma: 2.0,
            alpha1: 0.65,
            beta1: 0.35,
            omega_min: 0.7,
            omega_max: 0.99,
            omega_form: OmegaForm::Corrected,
            epochs: 200,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            buffer_multiplier: 4,
            knn_k: 20,
            encoder_hidden: 64,
            feature_dim: 32,
            head_hidden: 64,
            proj_dim: 16,
            aug_noise_sd: 0.03,
            dropout_p: 0.1,
            normalize_features: true,
            cross_view_denominator: false,
            train_last_layer_only: false,
            potential_mode: PotentialMode::Trainable,
            freeze_cluster_slots: false,
            losses: LossToggles::default(),
            seed: 0,
            infomap_restarts: 8,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl FromStr for OmegaForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(OmegaForm::Corrected),
            "printed" => Ok(OmegaForm::Printed),
            _ => Err(Error::Config(format!("unknown omega form {s:?}"))),
        }
    }
}

impl FromStr for PotentialMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trainable" => Ok(PotentialMode::Trainable),
            "frozen" => Ok(PotentialMode::Frozen),
            "disabled" => Ok(PotentialMode::Disabled),
            _ => Err(Error::Config(format!("unknown potential mode {s:?}"))),
        }
    }
}

impl OmegaForm {
    fn name(self) -> &'static str {
        match self {
            OmegaForm::Corrected => "corrected",
            OmegaForm::Printed => "printed",
        }
    }
}

impl PotentialMode {
    fn name(self) -> &'static str {
        match self {
            PotentialMode::Trainable => "trainable",
            PotentialMode::Frozen => "frozen",
            PotentialMode::Disabled => "disabled",
        }
    }
}

impl TrainConfig {
    /// Sets one field from its `key=value` spelling. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "tau" => self.tau = parse(key, value)?,
            "tau_t_start" => self.tau_t_start = parse(key, value)?,
            "tau_t_end" => self.tau_t_end = parse(key, value)?,
            "tau_t_warmup_epochs" => self.tau_t_warmup_epochs = parse(key, value)?,
            "tau_r" => self.tau_r = parse(key, value)?,
            "tau_f" => self.tau_f = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "alpha1" => self.alpha1 = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "omega_min" => self.omega_min = parse(key, value)?,
            "omega_max" => self.omega_max = parse(key, value)?,
            "omega_form" => self.omega_form = value.trim().parse()?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "buffer_multiplier" => self.buffer_multiplier = parse(key, value)?,
            "knn_k" => self.knn_k = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, value)?,
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "head_hidden" => self.head_hidden = parse(key, value)?,
            "proj_dim" => self.proj_dim = parse(key, value)?,
            "aug_noise_sd" => self.aug_noise_sd = parse(key, value)?,
            "dropout_p" => self.dropout_p = parse(key, value)?,
            "normalize_features" => self.normalize_features = parse_bool(key, value)?,
            "cross_view_denominator" => self.cross_view_denominator = parse_bool(key, value)?,
            "train_last_layer_only" => self.train_last_layer_only = parse_bool(key, value)?,
            "potential_mode" => self.potential_mode = value.trim().parse()?,
            "freeze_cluster_slots" => self.freeze_cluster_slots = parse_bool(key, value)?,
            "loss_cru" => self.losses.cru = parse_bool(key, value)?,
            "loss_crl" => self.losses.crl = parse_bool(key, value)?,
            "loss_sup" => self.losses.sup = parse_bool(key, value)?,
            "loss_unsup" => self.losses.unsup = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "infomap_restarts" => self.infomap_restarts = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` document. Blank lines and `#` comments are skipped.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// The full configuration as `key=value` lines, readable by `apply_kv_text`.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("tau", self.tau.to_string());
        put("tau_t_start", self.tau_t_start.to_string());
        put("tau_t_end", self.tau_t_end.to_string());
        put("tau_t_warmup_epochs", self.tau_t_warmup_epochs.to_string());
        put("tau_r", self.tau_r.to_string());
        put("tau_f", self.tau_f.to_string());
        put("gamma", self.gamma.to_string());
        put("alpha1", self.alpha1.to_string());
        put("beta1", self.beta1.to_string());
        put("omega_min", self.omega_min.to_string());
        put("omega_max", self.omega_max.to_string());
        put("omega_form", self.omega_form.name().into());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", self.lr.to_string());
        put("momentum", self.momentum.to_string());
        put("buffer_multiplier", self.buffer_multiplier.to_string());
        put("knn_k", self.knn_k.to_string());
        put("encoder_hidden", self.encoder_hidden.to_string());
        put("feature_dim", self.feature_dim.to_string());
        put("head_hidden", self.head_hidden.to_string());
        put("proj_dim", self.proj_dim.to_string());
        put("aug_noise_sd", self.aug_noise_sd.to_string());
        put("dropout_p", self.dropout_p.to_string());
        put("normalize_features", self.normalize_features.to_string());
        put("cross_view_denominator", self.cross_view_denominator.to_string());
        put("train_last_layer_only", self.train_last_layer_only.to_string());
        put("potential_mode", self.potential_mode.name().into());
        put("freeze_cluster_slots", self.freeze_cluster_slots.to_string());
        put("loss_cru", self.losses.cru.to_string());
        put("loss_crl", self.losses.crl.to_string());
        put("loss_sup", self.losses.sup.to_string());
        put("loss_unsup", self.losses.unsup.to_string());
        put("seed", self.seed.to_string());
        put("infomap_restarts", self.infomap_restarts.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("tau_t_start", self.tau_t_start),
            ("tau_t_end", self.tau_t_end),
            ("tau_r", self.tau_r),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0 < self.omega_min && self.omega_min <= self.omega_max && self.omega_max <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 < omega_min <= omega_max <= 1, got {} and {}",
                self.omega_min, self.omega_max
            )));
        }
        for (name, v) in [("alpha1", self.alpha1), ("beta1", self.beta1)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.gamma >= 0.0) || !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("gamma and lr must be non-negative, momentum in [0, 1)".into()));
        }
        if !(-1.0..=1.0).contains(&self.tau_f) {
            return Err(Error::Config(format!("tau_f must be in [-1, 1], got {}", self.tau_f)));
        }
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("buffer_multiplier", self.buffer_multiplier),
            ("knn_k", self.knn_k),
            ("encoder_hidden", self.encoder_hidden),
            ("feature_dim", self.feature_dim),
            ("head_hidden", self.head_hidden),
            ("proj_dim", self.proj_dim),
            ("infomap_restarts", self.infomap_restarts),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.aug_noise_sd >= 0.0) || !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("need aug_noise_sd >= 0 and dropout_p in [0, 1)".into()));
        }
        Ok(())
    }
}
