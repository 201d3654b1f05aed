use std::fmt::Write as _;

use pnp_core::evaluation::{bias_report, clustering_accuracy, BenchTiming, BiasReport, EvalReport};
use pnp_core::Result;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub k_e: usize,
    pub num_classes: usize,
    pub accuracy: EvalReport,
    pub bias: BiasReport,
}

impl Report {
    pub fn build(y_true: &[usize], y_pred: &[usize], old_classes: &[usize]) -> Result<Self> {
        let accuracy = clustering_accuracy(y_true, y_pred, old_classes)?;
        let bias = bias_report(y_true, y_pred, &accuracy.matching, old_classes)?;
        Ok(Report {
            k_e: accuracy.k_e,
            num_classes: accuracy.num_classes,
            accuracy,
            bias,
        })
    }

    pub fn table(&self) -> String {
        let a = &self.accuracy;
        let b = &self.bias;
        let mut s = String::new();
        let _ = writeln!(s, "{:<22}{:>10}", "metric", "value");
        let _ = writeln!(s, "{:<22}{:>10}", "K^e", self.k_e);
        let _ = writeln!(s, "{:<22}{:>10}", "true classes", self.num_classes);
        let _ = writeln!(s, "{:<22}{:>10}", "instances", a.num_instances);
        let _ = writeln!(s, "{:<22}{:>10.4}", "ACC all", a.acc_all);
        let _ = writeln!(s, "{:<22}{:>10.4}", "ACC old", a.acc_old);
        let _ = writeln!(s, "{:<22}{:>10.4}", "ACC new", a.acc_new);
        let _ = writeln!(s, "{:<22}{:>10}", "false old", b.false_old);
        let _ = writeln!(s, "{:<22}{:>10}", "false new", b.false_new);
        let _ = writeln!(s, "{:<22}{:>10}", "true old", b.true_old);
        let _ = writeln!(s, "{:<22}{:>10}", "true new", b.true_new);
        let _ = writeln!(s, "{:<22}{:>10}", "misclassified", b.misclassified);
        let _ = writeln!(s, "{:<22}{:>10.3}", "intra-class bias", b.intra_class_bias);
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub k: usize,
    pub k_e: usize,
    pub acc_all: f64,
}

pub fn sweep_table(points: &[SweepPoint]) -> String {
    let mut s = format!("{:>6}{:>8}{:>10}\n", "k", "K^e", "ACC");
    for p in points {
        let _ = writeln!(s, "{:>6}{:>8}{:>10.4}", p.k, p.k_e, p.acc_all);
    }
    s
}

pub fn bench_table(t: &BenchTiming, full_rows: usize, unlabelled_rows: usize) -> String {
    let mut s = format!("{:<14}{:>8}{:>14}\n", "set", "rows", "median ms");
    let _ = writeln!(s, "{:<14}{:>8}{:>14.3}", "full", full_rows, t.full_ms);
    let _ = writeln!(s, "{:<14}{:>8}{:>14.3}", "unlabelled", unlabelled_rows, t.unlabelled_ms);
    let _ = writeln!(s, "speedup {:.2}x over {} repeats", t.speedup(), t.repeats);
    s
}
