//! Text checkpoints. Layout:
//!
//! ```text
//! pnp-checkpoint 1
//! epoch <completed epochs>
//! normalize_features <true|false>
//! matrix <name> <rows> <cols>
//! <one line of cols values per row>
//! ...
//! end
//! ```
//!
//! Matrix names are `student.<l>.weight`, `student.<l>.bias`, the same for
//! `teacher` and `head`, then `potential_pool` and `labelled_protos`. Values are
//! written in shortest round-trip form, so loading restores them exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::state::ProberState;
use crate::error::{Error, Result};
use crate::model::{Linear, Mlp};
use crate::numerics::{GradientTape, Matrix};
use crate::prototypes::PrototypeBank;

const MAGIC: &str = "pnp-checkpoint 1";

fn put_matrix(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "matrix {name} {} {}", m.rows(), m.cols());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

fn put_mlp(out: &mut String, prefix: &str, net: &Mlp) {
    for (l, layer) in net.layers.iter().enumerate() {
        put_matrix(out, &format!("{prefix}.{l}.weight"), &layer.weight);
        put_matrix(out, &format!("{prefix}.{l}.bias"), &layer.bias);
    }
}

/// Serializes the persistent parts of `state`. Per-epoch buffers and optimizer
/// momentum are not stored.
pub fn write_checkpoint(state: &ProberState) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "epoch {}", state.epoch);
    let _ = writeln!(out, "normalize_features {}", state.student.normalize_output);
    put_mlp(&mut out, "student", &state.student);
    put_mlp(&mut out, "teacher", &state.teacher);
    put_mlp(&mut out, "head", &state.head);
    put_matrix(&mut out, "potential_pool", &state.bank.potential_pool);
    put_matrix(&mut out, "labelled_protos", &state.bank.labelled_protos);
    let _ = writeln!(out, "end");
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn take_mlp(mats: &mut BTreeMap<String, Matrix>, prefix: &str, normalize: bool) -> Result<Mlp> {
    let mut layers = Vec::new();
    loop {
        let l = layers.len();
        let (Some(weight), Some(bias)) = (
            mats.remove(&format!("{prefix}.{l}.weight")),
            mats.remove(&format!("{prefix}.{l}.bias")),
        ) else {
            break;
        };
        if bias.shape() != (1, weight.rows()) || (l > 0 && {
            let prev: &Linear = &layers[l - 1];
            prev.out_dim() != weight.cols()
        }) {
            return Err(Error::Validation(format!("{prefix} layer {l} has inconsistent shapes")));
        }
        layers.push(Linear { weight, bias });
    }
    if layers.is_empty() {
        return Err(Error::Validation(format!("checkpoint has no {prefix} layers")));
    }
    Ok(Mlp {
        layers,
        normalize_output: normalize,
    })
}

pub fn read_checkpoint(text: &str) -> Result<ProberState> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| -> Result<(usize, &str)> {
        lines
            .next()
            .ok_or_else(|| parse_err(text.lines().count() + 1, format!("unexpected end of file, expected {what}")))
    };
    let (n, magic) = next("header")?;
    if magic != MAGIC {
        return Err(parse_err(n, format!("expected {MAGIC:?}")));
    }
    let (n, line) = next("epoch")?;
    let epoch: usize = line
        .strip_prefix("epoch ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(n, "expected `epoch <count>`"))?;
    let (n, line) = next("normalize_features")?;
    let normalize = match line.strip_prefix("normalize_features ") {
        Some("true") => true,
        Some("false") => false,
        _ => return Err(parse_err(n, "expected `normalize_features <true|false>`")),
    };

    let mut mats = BTreeMap::new();
    loop {
        let (n, line) = next("matrix or end")?;
        if line == "end" {
            break;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let (name, rows, cols) = match parts.as_slice() {
            ["matrix", name, r, c] => match (r.parse::<usize>(), c.parse::<usize>()) {
                (Ok(r), Ok(c)) => (name.to_string(), r, c),
                _ => return Err(parse_err(n, "bad matrix dimensions")),
            },
            _ => return Err(parse_err(n, format!("expected matrix header, got {line:?}"))),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, row) = next("matrix row")?;
            let before = data.len();
            for tok in row.split_whitespace() {
                let x: f64 = tok.parse().map_err(|_| parse_err(n, format!("bad number {tok:?}")))?;
                if !x.is_finite() {
                    return Err(parse_err(n, "non-finite value"));
                }
                data.push(x);
            }
            if data.len() - before != cols {
                return Err(parse_err(n, format!("expected {cols} values, got {}", data.len() - before)));
            }
        }
        if mats.insert(name.clone(), Matrix::from_vec(rows, cols, data)?).is_some() {
            return Err(parse_err(n, format!("duplicate matrix {name}")));
        }
    }

    let student = take_mlp(&mut mats, "student", normalize)?;
    let teacher = take_mlp(&mut mats, "teacher", normalize)?;
    let head = take_mlp(&mut mats, "head", true)?;
    let pool = mats
        .remove("potential_pool")
        .ok_or_else(|| Error::Validation("checkpoint has no potential_pool".into()))?;
    let labelled = mats
        .remove("labelled_protos")
        .ok_or_else(|| Error::Validation("checkpoint has no labelled_protos".into()))?;
    if let Some(extra) = mats.keys().next() {
        return Err(Error::Validation(format!("unexpected matrix {extra}")));
    }
    let d = student.output_dim();
    if !student.same_shape(&teacher) || head.input_dim() != d || pool.cols() != d || labelled.cols() != d {
        return Err(Error::Validation("checkpoint matrices have inconsistent shapes".into()));
    }
    Ok(ProberState {
        student,
        teacher,
        head,
        bank: PrototypeBank {
            cluster_protos: Matrix::zeros(0, d),
            buffer_size: pool.rows(),
            potential_pool: pool,
            labelled_protos: labelled,
        },
        student_buffer: None,
        teacher_buffer: None,
        epoch,
        velocity: GradientTape::new(),
    })
}

pub fn save_checkpoint(state: &ProberState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ProberState> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text)
}
