use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use pnp_core::datagen::{generate_mixture, split_gcd, GcdDataset};
use pnp_core::evaluation::{bench_clustering, BenchConfig};
use pnp_core::fastcluster::estimate_k;
use pnp_core::trainer::{
    encode, infer, load_checkpoint, metrics_json, save_checkpoint, train_epoch, ProberState, TrainConfig,
    TrainingData,
};
use pnp_core::{Error as CoreError, FeatureMatrix};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::report::{bench_table, sweep_table, Report, SweepPoint};
use crate::{Ablation, BenchArgs, EvalArgs, GenArgs, TrainArgs};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_FILE: &str = "sweep.jsonl";
pub const DIVERGENCE_CHECKPOINT: &str = "divergence.ckpt";
pub const DIVERGENCE_NOTE: &str = "divergence.txt";

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| {
        CliError::Core(CoreError::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Defaults, then the config file, then `key=value` overrides.
fn resolve_config(file: Option<&Path>, overrides: &[String]) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = file {
        cfg.apply_kv_text(&read_text(path)?)?;
    }
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{kv}` is not of the form key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

pub fn gen(a: &GenArgs) -> CliResult<()> {
    if a.old == 0 || a.old > a.classes {
        return Err(CliError::Usage(format!(
            "--old must be between 1 and --classes ({}), got {}",
            a.classes, a.old
        )));
    }
    let points = generate_mixture(a.classes, a.dim, a.per_class, a.sep, a.noise, a.seed)?;
    let ds = split_gcd(&points, a.old as f64 / a.classes as f64, a.labelled_fraction, a.seed)?;
    ds.save(&a.out)?;
    let manifest = json!({
        "dataset": a.out.display().to_string(),
        "classes": a.classes,
        "old_classes": ds.old_classes,
        "per_class": a.per_class,
        "dim": a.dim,
        "seed": a.seed,
        "sep": a.sep,
        "noise": a.noise,
        "labelled_fraction": a.labelled_fraction,
        "labelled": ds.labelled.len(),
        "unlabelled": ds.unlabelled.len(),
    });
    let mpath = manifest_path(&a.out);
    write_file(&mpath, &format!("{}\n", serde_json::to_string_pretty(&manifest).expect("manifest serializes")))?;
    println!(
        "wrote {} (labelled {}, unlabelled {}) and {}",
        a.out.display(),
        ds.labelled.len(),
        ds.unlabelled.len(),
        mpath.display()
    );
    Ok(())
}

fn final_report(state: &ProberState, ds: &GcdDataset, cfg: &TrainConfig) -> CliResult<Report> {
    let clusters = infer(state, &ds.unlabelled_matrix(), cfg)?;
    Ok(Report::build(&ds.unlabelled_classes(), &clusters.assignment, &ds.old_classes)?)
}

fn print_report(report: &Report) {
    print!("{}", report.table());
    println!("{}", serde_json::to_string(report).expect("report serializes"));
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = resolve_config(a.config.as_deref(), &a.overrides)?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    match a.ablate {
        Some(Ablation::NoPp) => cfg.set("potential_mode", "disabled")?,
        Some(Ablation::FrozenPp) => cfg.set("potential_mode", "frozen")?,
        None => {}
    }
    cfg.validate()?;

    let ds = GcdDataset::load(&a.data)?;
    let data = TrainingData::from_dataset(&ds)?;

    let ckpt_dir = a.out.join(CHECKPOINT_DIR);
    create_dir(&ckpt_dir)?;
    write_file(&a.out.join(CONFIG_FILE), &cfg.to_kv_text())?;
    let metrics_path = a.out.join(METRICS_FILE);
    let mut metrics = fs::File::create(&metrics_path).map_err(|source| CliError::Write {
        path: metrics_path.clone(),
        source,
    })?;

    let mut state = ProberState::new(data.dim(), data.num_labelled_classes, &cfg)?;
    for epoch in 0..cfg.epochs {
        let m = match train_epoch(&mut state, &data, &cfg, epoch) {
            Ok(m) => m,
            Err(e @ CoreError::Divergence { .. }) => {
                save_checkpoint(&state, a.out.join(DIVERGENCE_CHECKPOINT))?;
                write_file(&a.out.join(DIVERGENCE_NOTE), &format!("{e}\n"))?;
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(metrics, "{}", metrics_json(&m, true)).map_err(|source| CliError::Write {
            path: metrics_path.clone(),
            source,
        })?;
        info!("epoch {epoch}: K^e {} loss {:.4}", m.k_e, m.losses.total);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            save_checkpoint(&state, ckpt_dir.join(format!("epoch-{:04}.ckpt", epoch + 1)))?;
        }
    }
    save_checkpoint(&state, a.out.join(FINAL_CHECKPOINT))?;

    let report = final_report(&state, &ds, &cfg)?;
    write_file(
        &a.out.join(REPORT_FILE),
        &format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes")),
    )?;
    print_report(&report);
    Ok(())
}

fn parse_predictions(text: &str) -> CliResult<Vec<usize>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let id = t.parse::<usize>().map_err(|e| CoreError::Parse {
            line: i + 1,
            message: format!("`{t}` is not a cluster id: {e}"),
        })?;
        out.push(id);
    }
    Ok(out)
}

fn parse_sweep(arg: &str) -> CliResult<Vec<usize>> {
    let list = arg
        .strip_prefix("k=")
        .ok_or_else(|| CliError::Usage(format!("--sweep expects k=LIST, got `{arg}`")))?;
    let ks = list
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("bad --sweep list `{list}`: {e}")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::Usage("--sweep values must be positive".into()));
    }
    Ok(ks)
}

/// `config.txt` next to the checkpoint, or one directory up.
fn run_config_for(checkpoint: &Path) -> Option<PathBuf> {
    let dir = checkpoint.parent()?;
    [dir.join(CONFIG_FILE), dir.parent()?.join(CONFIG_FILE)]
        .into_iter()
        .find(|p| p.is_file())
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let sweep = a.sweep.as_deref().map(parse_sweep).transpose()?;
    if a.checkpoint.is_none() && a.predictions.is_none() && sweep.is_none() {
        return Err(CliError::Usage("eval needs --checkpoint, --predictions or --sweep".into()));
    }
    let config_file = a
        .config
        .clone()
        .or_else(|| a.checkpoint.as_deref().and_then(run_config_for));
    let cfg = resolve_config(config_file.as_deref(), &a.overrides)?;
    cfg.validate()?;

    let ds = GcdDataset::load(&a.data)?;
    let y_true = ds.unlabelled_classes();
    let x = ds.unlabelled_matrix();
    let state = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;

    let report = if let Some(state) = &state {
        let clusters = infer(state, &x, &cfg)?;
        Some(Report::build(&y_true, &clusters.assignment, &ds.old_classes)?)
    } else if let Some(path) = &a.predictions {
        let pred = parse_predictions(&read_text(path)?)?;
        if pred.len() != y_true.len() {
            return Err(CoreError::Validation(format!(
                "{} predictions for {} unlabelled rows",
                pred.len(),
                y_true.len()
            ))
            .into());
        }
        Some(Report::build(&y_true, &pred, &ds.old_classes)?)
    } else {
        None
    };

    if let Some(out) = &a.out {
        create_dir(out)?;
    }
    if let Some(report) = &report {
        print_report(report);
        if let Some(out) = &a.out {
            write_file(
                &out.join(REPORT_FILE),
                &format!("{}\n", serde_json::to_string_pretty(report).expect("report serializes")),
            )?;
        }
    }

    if let Some(ks) = sweep {
        let raw = match &state {
            Some(_) => None,
            None => Some(FeatureMatrix::normalize(&x)?),
        };
        let mut points = Vec::with_capacity(ks.len());
        for k in ks {
            let clusters = match (&state, &raw) {
                (Some(s), _) => infer(s, &x, &TrainConfig { knn_k: k, ..cfg.clone() })?,
                (None, Some(f)) => estimate_k(f, cfg.tau_f, k, cfg.seed)?,
                (None, None) => unreachable!("raw features exist without a checkpoint"),
            };
            let r = Report::build(&y_true, &clusters.assignment, &ds.old_classes)?;
            points.push(SweepPoint {
                k,
                k_e: r.k_e,
                acc_all: r.accuracy.acc_all,
            });
        }
        print!("{}", sweep_table(&points));
        let lines: String = points
            .iter()
            .map(|p| format!("{}\n", serde_json::to_string(p).expect("sweep point serializes")))
            .collect();
        print!("{lines}");
        if let Some(out) = &a.out {
            write_file(&out.join(SWEEP_FILE), &lines)?;
        }
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    if a.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    if a.repeats == 1 {
        warn!("--repeats 1: a single timing is noisy; use 5 or more for a stable median");
    }
    let ds = GcdDataset::load(&a.data)?;
    let x_unl = ds.unlabelled_matrix();
    let x_full = ds.labelled_matrix().vstack(&x_unl)?;
    let (full, unl) = match &a.checkpoint {
        Some(path) => {
            let state = load_checkpoint(path)?;
            (encode(&state, &x_full)?, encode(&state, &x_unl)?)
        }
        None => (FeatureMatrix::normalize(&x_full)?, FeatureMatrix::normalize(&x_unl)?),
    };
    let cfg = BenchConfig {
        tau_f: a.tau_f,
        knn_k: a.knn_k,
        seed: a.seed,
        repeats: a.repeats,
        ..BenchConfig::default()
    };
    let timing = bench_clustering(&full, &unl, &cfg)?;
    print!("{}", bench_table(&timing, full.len(), unl.len()));
    let line = json!({
        "full_rows": full.len(),
        "unlabelled_rows": unl.len(),
        "full_ms": timing.full_ms,
        "unlabelled_ms": timing.unlabelled_ms,
        "speedup": timing.speedup(),
        "repeats": timing.repeats,
    });
    println!("{line}");
    Ok(())
}
