//! Synthetic Gaussian-mixture datasets split into labelled and unlabelled parts,
//! the text file format for them, and two-view vector augmentation.
//!
//! # Dataset file format
//!
//! ```text
//! gcd-dataset 1
//! dim 3
//! old_classes 0 1
//! all_classes 0 1 2
//! labelled 2
//! unlabelled 3
//! L 0 0.1 0.2 0.3
//! L 1 ...
//! U 2 ...
//! ```
//!
//! Header lines come first, in this order. Each record is `L` (labelled) or `U`
//! (unlabelled), the class id, then `dim` values printed in shortest round-trip
//! form so that a save/load cycle is bit-exact. Lines starting with `#` and
//! blank lines are ignored.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, DEFAULT_NORM_EPS};
use crate::seeding::rng_for;

const FORMAT_MAGIC: &str = "gcd-dataset";
const FORMAT_VERSION: u32 = 1;
const MAX_DROPOUT_RETRIES: usize = 16;

/// Points with ground-truth class ids, before the labelled/unlabelled split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledPoints {
    pub dim: usize,
    pub num_classes: usize,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub x: Vec<f64>,
    pub class: usize,
}

/// A generalized-category-discovery dataset: labelled instances from the old
/// classes and unlabelled instances from old and new classes. The class ids of
/// unlabelled instances are hidden from training and used only for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GcdDataset {
    pub dim: usize,
    pub labelled: Vec<Instance>,
    pub unlabelled: Vec<Instance>,
    /// Sorted ids of the labelled ("old") classes.
    pub old_classes: Vec<usize>,
    /// Sorted ids of every class present in the unlabelled data.
    pub all_classes: Vec<usize>,
}

impl GcdDataset {
    pub fn labelled_matrix(&self) -> Matrix {
        rows_matrix(&self.labelled, self.dim)
    }

    pub fn unlabelled_matrix(&self) -> Matrix {
        rows_matrix(&self.unlabelled, self.dim)
    }

    pub fn labelled_classes(&self) -> Vec<usize> {
        self.labelled.iter().map(|i| i.class).collect()
    }

    /// Hidden ground truth of the unlabelled part.
    pub fn unlabelled_classes(&self) -> Vec<usize> {
        self.unlabelled.iter().map(|i| i.class).collect()
    }

    /// Position of `class` within `old_classes`.
    pub fn old_class_index(&self, class: usize) -> Option<usize> {
        self.old_classes.binary_search(&class).ok()
    }

    pub fn len(&self) -> usize {
        self.labelled.len() + self.unlabelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let old: BTreeSet<_> = self.old_classes.iter().copied().collect();
        let all: BTreeSet<_> = self.all_classes.iter().copied().collect();
        if old.len() != self.old_classes.len() || all.len() != self.all_classes.len() {
            return Err(Error::Validation("duplicate class ids in class lists".into()));
        }
        if !old.is_subset(&all) {
            return Err(Error::Validation("old classes are not a subset of all classes".into()));
        }
        if old.len() == all.len() {
            log::warn!("dataset has no new classes");
        }
        for (i, inst) in self.labelled.iter().enumerate() {
            if !old.contains(&inst.class) {
                return Err(Error::Validation(format!(
                    "labelled instance {i} has class {} outside the old classes",
                    inst.class
                )));
            }
        }
        for (i, inst) in self.unlabelled.iter().enumerate() {
            if !all.contains(&inst.class) {
                return Err(Error::Validation(format!(
                    "unlabelled instance {i} has class {} outside the class list",
                    inst.class
                )));
            }
        }
        for inst in self.labelled.iter().chain(&self.unlabelled) {
            if inst.x.len() != self.dim {
                return Err(Error::Validation(format!(
                    "instance of dimension {} in a dataset of dimension {}",
                    inst.x.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |ids: &[usize]| ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        writeln!(out, "{FORMAT_MAGIC} {FORMAT_VERSION}").unwrap();
        writeln!(out, "dim {}", self.dim).unwrap();
        writeln!(out, "old_classes {}", join(&self.old_classes)).unwrap();
        writeln!(out, "all_classes {}", join(&self.all_classes)).unwrap();
        writeln!(out, "labelled {}", self.labelled.len()).unwrap();
        writeln!(out, "unlabelled {}", self.unlabelled.len()).unwrap();
        for (tag, set) in [("L", &self.labelled), ("U", &self.unlabelled)] {
            for inst in set {
                write!(out, "{tag} {}", inst.class).unwrap();
                for v in &inst.x {
                    write!(out, " {v}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        parse_dataset(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_dataset(&text)
    }
}

fn rows_matrix(set: &[Instance], dim: usize) -> Matrix {
    let mut data = Vec::with_capacity(set.len() * dim);
    for inst in set {
        data.extend_from_slice(&inst.x);
    }
    Matrix::from_vec(set.len(), dim, data).expect("instances share the dataset dimension")
}

/// Samples `per_class` points around each of `num_classes` means. Means lie on
/// the sphere of radius `class_sep`. Noise is isotropic Gaussian with
/// per-coordinate standard deviation `noise_sd / √dim`, so `noise_sd` is the
/// root-mean-square length of the noise vector and `class_sep / noise_sd` is a
/// dimension-free separation ratio.
pub fn generate_mixture(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    class_sep: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<LabelledPoints> {
    if num_classes < 2 {
        return Err(Error::Parameter(format!("need at least 2 classes, got {num_classes}")));
    }
    if dim < 2 {
        return Err(Error::Parameter(format!("dimension must be at least 2, got {dim}")));
    }
    if !(class_sep > 0.0) {
        return Err(Error::Parameter(format!("class_sep must be positive, got {class_sep}")));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Parameter(format!("noise_sd must be non-negative, got {noise_sd}")));
    }
    if per_class == 0 {
        return Err(Error::Parameter("per_class must be at least 1".into()));
    }

    let mut mean_rng = rng_for(&[seed, 0]);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| mean_rng.sample(StandardNormal)).collect();
            let n = dot(&v, &v).sqrt();
            if n > 1e-9 {
                break v.into_iter().map(|x| x * class_sep / n).collect();
            }
        })
        .collect();

    let coord_sd = noise_sd / (dim as f64).sqrt();
    let mut noise_rng = rng_for(&[seed, 1]);
    let mut points = Vec::with_capacity(num_classes * per_class);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let p = mean
                .iter()
                .map(|&m| {
                    let e: f64 = noise_rng.sample(StandardNormal);
                    m + coord_sd * e
                })
                .collect();
            points.push(p);
            labels.push(c);
        }
    }
    Ok(LabelledPoints {
        dim,
        num_classes,
        points,
        labels,
    })
}

/// Splits points into a GCD dataset. The first `⌈old_fraction · classes⌉` class
/// ids (in ascending order) become the old classes; `labelled_fraction` of each
/// old class goes to the labelled set and everything else is unlabelled.
pub fn split_gcd(
    points: &LabelledPoints,
    old_fraction: f64,
    labelled_fraction: f64,
    seed: u64,
) -> Result<GcdDataset> {
    if !(old_fraction > 0.0 && old_fraction <= 1.0) {
        return Err(Error::Parameter(format!("old_fraction must be in (0, 1], got {old_fraction}")));
    }
    if !(labelled_fraction > 0.0 && labelled_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "labelled_fraction must be in (0, 1), got {labelled_fraction}"
        )));
    }
    if points.points.len() != points.labels.len() {
        return Err(Error::Dimension("points and labels differ in length".into()));
    }
    let classes: Vec<usize> = points.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.is_empty() {
        return Err(Error::EmptyInput("no points to split".into()));
    }
    // The tolerance keeps products like 0.3 * 10 from rounding up to 4.
    let num_old = ((old_fraction * classes.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let old_classes: Vec<usize> = classes[..num_old.min(classes.len())].to_vec();

    let mut labelled_idx = BTreeSet::new();
    let mut rng = rng_for(&[seed, 2]);
    for &c in &old_classes {
        let mut members: Vec<usize> = (0..points.labels.len()).filter(|&i| points.labels[i] == c).collect();
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "class {c} has {} point(s); labelled and unlabelled sides both need one",
                members.len()
            )));
        }
        let take = ((labelled_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        members.shuffle(&mut rng);
        labelled_idx.extend(members.into_iter().take(take));
    }

    let mut labelled = Vec::with_capacity(labelled_idx.len());
    let mut unlabelled = Vec::with_capacity(points.points.len() - labelled_idx.len());
    for (i, (x, &class)) in points.points.iter().zip(&points.labels).enumerate() {
        let inst = Instance { x: x.clone(), class };
        if labelled_idx.contains(&i) {
            labelled.push(inst);
        } else {
            unlabelled.push(inst);
        }
    }
    let ds = GcdDataset {
        dim: points.dim,
        labelled,
        unlabelled,
        old_classes,
        all_classes: classes,
    };
    ds.validate()?;
    Ok(ds)
}

/// Identifies the random stream of one augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewSeed {
    pub seed: u64,
    pub epoch: u64,
    pub index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view1: Vec<f64>,
    pub view2: Vec<f64>,
    pub source_index: usize,
}

/// Two independently perturbed, unit-normalized views of `x`: additive Gaussian
/// noise, then coordinate dropout with probability `dropout_p`.
pub fn augment(x: &[f64], aug_noise_sd: f64, dropout_p: f64, seed: ViewSeed) -> Result<ViewPair> {
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::Parameter(format!("dropout_p must be in [0, 1), got {dropout_p}")));
    }
    if !(aug_noise_sd >= 0.0) {
        return Err(Error::Parameter(format!("aug_noise_sd must be non-negative, got {aug_noise_sd}")));
    }
    let view = |which: u64| -> Result<Vec<f64>> {
        let mut rng = rng_for(&[seed.seed, seed.epoch, seed.index, which]);
        let mut v: Vec<f64> = x
            .iter()
            .map(|&xi| {
                if aug_noise_sd > 0.0 {
                    let e: f64 = rng.sample(StandardNormal);
                    xi + aug_noise_sd * e
                } else {
                    xi
                }
            })
            .collect();
        if dropout_p > 0.0 {
            let mut mask = vec![true; v.len()];
            let mut attempts = 0;
            loop {
                mask.iter_mut().for_each(|m| *m = rng.random::<f64>() >= dropout_p);
                if mask.iter().any(|&m| m) {
                    break;
                }
                attempts += 1;
                if attempts >= MAX_DROPOUT_RETRIES {
                    return Err(Error::DegenerateInput(
                        "dropout removed every coordinate on all retries".into(),
                    ));
                }
            }
            v.iter_mut().zip(&mask).for_each(|(x, &keep)| {
                if !keep {
                    *x = 0.0
                }
            });
        }
        let n = dot(&v, &v).sqrt();
        if !(n >= DEFAULT_NORM_EPS) {
            return Err(Error::DegenerateInput(format!("augmented view has norm {n:e}")));
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(v)
    };
    Ok(ViewPair {
        view1: view(1)?,
        view2: view(2)?,
        source_index: seed.index as usize,
    })
}

fn parse_dataset(text: &str) -> Result<GcdDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut last_line = 0;

    let mut header = |key: &str| -> Result<(usize, Vec<&str>)> {
        let (no, line) = lines.next().ok_or(Error::Parse {
            line: last_line + 1,
            message: format!("unexpected end of file, expected `{key}`"),
        })?;
        last_line = no;
        let mut parts = line.split_whitespace();
        let found = parts.next().unwrap_or("");
        if found != key {
            return Err(Error::Parse {
                line: no,
                message: format!("expected `{key}`, found `{found}`"),
            });
        }
        Ok((no, parts.collect()))
    };
    let parse_usize = |no: usize, s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Parse {
            line: no,
            message: format!("`{s}` is not a non-negative integer"),
        })
    };
    let single = |no: usize, vals: &[&str], key: &str| -> Result<usize> {
        match vals {
            [v] => parse_usize(no, v),
            _ => Err(Error::Parse {
                line: no,
                message: format!("`{key}` takes exactly one value"),
            }),
        }
    };

    let (no, magic) = header(FORMAT_MAGIC)?;
    if magic != [FORMAT_VERSION.to_string().as_str()] {
        return Err(Error::Parse {
            line: no,
            message: format!("unsupported format version {magic:?}"),
        });
    }
    let (no, v) = header("dim")?;
    let dim = single(no, &v, "dim")?;
    let (no, v) = header("old_classes")?;
    let old_classes = v.iter().map(|s| parse_usize(no, s)).collect::<Result<Vec<_>>>()?;
    let (no, v) = header("all_classes")?;
    let all_classes = v.iter().map(|s| parse_usize(no, s)).collect::<Result<Vec<_>>>()?;
    let (no, v) = header("labelled")?;
    let n_labelled = single(no, &v, "labelled")?;
    let (no, v) = header("unlabelled")?;
    let n_unlabelled = single(no, &v, "unlabelled")?;

    let mut labelled = Vec::with_capacity(n_labelled);
    let mut unlabelled = Vec::with_capacity(n_unlabelled);
    for (no, line) in lines {
        last_line = no;
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or("");
        let class = parse_usize(no, parts.next().unwrap_or(""))?;
        let x = parts
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line: no,
                    message: format!("`{s}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if x.len() != dim {
            return Err(Error::Parse {
                line: no,
                message: format!("record has {} values, expected {dim}", x.len()),
            });
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: no,
                message: format!("non-finite value {bad}"),
            });
        }
        let inst = Instance { x, class };
        match tag {
            "L" if !unlabelled.is_empty() => {
                return Err(Error::Parse {
                    line: no,
                    message: "labelled record after unlabelled records".into(),
                })
            }
            "L" => labelled.push(inst),
            "U" => unlabelled.push(inst),
            other => {
                return Err(Error::Parse {
                    line: no,
                    message: format!("unknown record tag `{other}`"),
                })
            }
        }
    }

    if labelled.len() > n_labelled || unlabelled.len() > n_unlabelled {
        return Err(Error::Validation(format!(
            "header declares {n_labelled} labelled / {n_unlabelled} unlabelled records, body has {} / {}",
            labelled.len(),
            unlabelled.len()
        )));
    }
    if labelled.len() < n_labelled || unlabelled.len() < n_unlabelled {
        return Err(Error::Parse {
            line: last_line + 1,
            message: format!(
                "unexpected end of file: {} of {n_labelled} labelled and {} of {n_unlabelled} unlabelled records",
                labelled.len(),
                unlabelled.len()
            ),
        });
    }
    let ds = GcdDataset {
        dim,
        labelled,
        unlabelled,
        old_classes,
        all_classes,
    };
    ds.validate()?;
    Ok(ds)
}
