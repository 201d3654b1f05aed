use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pnp_core::datagen::GcdDataset;
use tempfile::TempDir;

fn pnp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run pnp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn small_dataset(dir: &Path) -> PathBuf {
    let out = dir.join("d.gcd");
    let o = pnp(&[
        "gen", "--classes", "4", "--old", "2", "--per-class", "30", "--dim", "6", "--seed", "3", "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn json_lines(text: &str) -> Vec<serde_json::Value> {
    text.lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

#[test]
fn gen_writes_dataset_and_manifest_with_expected_counts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.gcd");
    let o = pnp(&[
        "gen", "--classes", "10", "--old", "5", "--per-class", "100", "--dim", "32", "--seed", "1", "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ds = GcdDataset::load(&out).unwrap();
    assert_eq!(ds.labelled.len(), 250);
    assert_eq!(ds.unlabelled.len(), 750);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("d.gcd.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["labelled"], 250);
    assert_eq!(manifest["unlabelled"], 750);
}

#[test]
fn gen_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.gcd");
    let b = dir.path().join("b.gcd");
    for out in [&a, &b] {
        let o = pnp(&[
            "gen", "--classes", "5", "--old", "2", "--per-class", "20", "--dim", "4", "--seed", "9", "--out",
            path_str(out),
        ]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let o = pnp(&["gen", "--classes", "10", "--old", "5", "--dim", "32"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--per-class"));
}

#[test]
fn too_many_old_classes_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.gcd");
    let o = pnp(&[
        "gen", "--classes", "3", "--old", "4", "--per-class", "10", "--dim", "4", "--out", path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_writes_run_directory() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    let o = pnp(&[
        "train", "--data", path_str(&data), "--epochs", "2", "--seed", "7", "--set", "checkpoint_every=1", "--out",
        path_str(&run),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["config.txt", "metrics.jsonl", "final.ckpt", "report.json", "checkpoints/epoch-0001.ckpt", "checkpoints/epoch-0002.ckpt"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics = json_lines(&fs::read_to_string(run.join("metrics.jsonl")).unwrap());
    assert_eq!(metrics.len(), 2);
    assert_eq!(metrics[1]["epoch"], 1);
    assert!(metrics[0]["k_e"].as_u64().unwrap() >= 1);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let acc = report["accuracy"]["acc_all"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(stdout(&o).contains("K^e"));
}

#[test]
fn train_layers_defaults_file_and_flags() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "# test config\nepochs = 5\nseed = 3\nknn_k = 8\n").unwrap();
    let run = dir.path().join("run");
    let o = pnp(&[
        "train", "--data", path_str(&data), "--config", path_str(&cfg), "--epochs", "1", "--set", "knn_k=6",
        "--out", path_str(&run),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut echoed = pnp_core::trainer::TrainConfig::default();
    echoed.apply_kv_text(&fs::read_to_string(run.join("config.txt")).unwrap()).unwrap();
    assert_eq!(echoed.epochs, 1);
    assert_eq!(echoed.seed, 3);
    assert_eq!(echoed.knn_k, 6);
    assert_eq!(echoed.tau_f, pnp_core::trainer::TrainConfig::default().tau_f);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let o = pnp(&[
        "train", "--data", path_str(&data), "--config", path_str(&cfg), "--out",
        path_str(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn ablation_flags_set_potential_mode() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    for (flag, mode) in [("no-pp", "disabled"), ("frozen-pp", "frozen")] {
        let run = dir.path().join(flag);
        let o = pnp(&["train", "--data", path_str(&data), "--epochs", "1", "--ablate", flag, "--out", path_str(&run)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let text = fs::read_to_string(run.join("config.txt")).unwrap();
        assert!(text.lines().any(|l| l == format!("potential_mode={mode}")), "{text}");
    }
}

#[test]
fn divergence_exits_with_code_three() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    let o = pnp(&["train", "--data", path_str(&data), "--epochs", "3", "--set", "lr=1e200", "--out", path_str(&run)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(run.join("divergence.txt").is_file());
    assert!(run.join("divergence.ckpt").is_file());
}

#[test]
fn eval_of_perfect_predictions_is_exact() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let ds = GcdDataset::load(&data).unwrap();
    let preds: String = ds.unlabelled_classes().iter().map(|c| format!("{}\n", c + 100)).collect();
    let pred_path = dir.path().join("pred.txt");
    fs::write(&pred_path, preds).unwrap();
    let out = dir.path().join("eval");
    let o = pnp(&["eval", "--data", path_str(&data), "--predictions", path_str(&pred_path), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = json_lines(&stdout(&o));
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["accuracy"]["acc_all"], 1.0);
    assert_eq!(lines[0]["k_e"], 4);
    assert_eq!(lines[0]["bias"]["misclassified"], 0);
    assert!(out.join("report.json").is_file());
}

#[test]
fn eval_rejects_wrong_prediction_count() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let pred_path = dir.path().join("pred.txt");
    fs::write(&pred_path, "0\n1\n").unwrap();
    let o = pnp(&["eval", "--data", path_str(&data), "--predictions", path_str(&pred_path)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_checkpoint_with_sweep_reports_k_curve() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    let o = pnp(&["train", "--data", path_str(&data), "--epochs", "1", "--out", path_str(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("eval");
    let o = pnp(&[
        "eval", "--data", path_str(&data), "--checkpoint", path_str(&run.join("final.ckpt")), "--sweep",
        "k=5,10,20,40", "--out", path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = json_lines(&stdout(&o));
    assert_eq!(lines.len(), 5);
    let ks: Vec<u64> = lines[1..].iter().map(|l| l["k"].as_u64().unwrap()).collect();
    assert_eq!(ks, vec![5, 10, 20, 40]);
    assert!(lines[1..].iter().all(|l| l["k_e"].as_u64().unwrap() >= 1));
    // The default config clusters with k = 20, so the report agrees with that sweep point.
    assert_eq!(lines[0]["k_e"], lines[3]["k_e"]);
    assert_eq!(fs::read_to_string(out.join("sweep.jsonl")).unwrap().lines().count(), 4);
}

#[test]
fn eval_without_source_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let o = pnp(&["eval", "--data", path_str(&data)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_reports_two_medians_and_ratio() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let o = pnp(&["bench", "--data", path_str(&data), "--repeats", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = json_lines(&stdout(&o));
    assert_eq!(lines.len(), 1);
    let full = lines[0]["full_ms"].as_f64().unwrap();
    let unl = lines[0]["unlabelled_ms"].as_f64().unwrap();
    let ratio = lines[0]["speedup"].as_f64().unwrap();
    assert!(full > 0.0 && unl > 0.0);
    assert!((ratio - full / unl).abs() < 1e-9);
    assert_eq!(lines[0]["full_rows"], 120);
    assert_eq!(lines[0]["unlabelled_rows"], 90);
}

#[test]
fn bench_with_one_repeat_warns() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let o = pnp(&["bench", "--data", path_str(&data), "--repeats", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("noisy"));
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.gcd");
    for cmd in ["bench", "train"] {
        let o = pnp(&[cmd, "--data", path_str(&missing)]);
        assert_eq!(o.status.code(), Some(2), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn help_lists_every_subcommand() {
    let o = pnp(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for sub in ["gen", "train", "eval", "bench"] {
        assert!(text.contains(sub));
    }
}
