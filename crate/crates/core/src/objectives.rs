//! Loss terms with hand-derived adjoints.
//!
//! Conception losses act on encoder features `v` and prototype matrices; the
//! instance losses act on projected embeddings `z`. Every function returns the
//! loss value together with the adjoints of its differentiable inputs.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{logsumexp, matmul, matmul_nt, matmul_tn, softmax_rows, softmax_rows_backward, Matrix};

/// Row-stochastic prediction over the prototypes of a memory buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Matrix,
    pub temperature: f64,
}

impl Prediction {
    /// `p̄`, the batch mean of the rows.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.probs.rows().max(1) as f64;
        self.probs.col_sums().as_slice().iter().map(|s| s / n).collect()
    }
}

fn predict(v: &Matrix, prototypes: &Matrix, temperature: f64) -> Result<Prediction> {
    let scores = matmul_nt(v, prototypes)?;
    Ok(Prediction {
        probs: softmax_rows(&scores, temperature)?,
        temperature,
    })
}

/// `softmax(v · m^sᵀ / τ)`.
pub fn student_predict(v: &Matrix, buffer: &Matrix, tau: f64) -> Result<Prediction> {
    predict(v, buffer, tau)
}

/// `softmax(v · m^tᵀ / τ_t)`. The result is a constant target: nothing here is
/// differentiated.
pub fn teacher_predict(v: &Matrix, buffer: &Matrix, tau_t: f64) -> Result<Prediction> {
    predict(v, buffer, tau_t)
}

/// A loss over dot-product scores `v · μᵀ` with adjoints for both factors.
#[derive(Debug, Clone)]
pub struct ScoreLoss {
    pub value: f64,
    pub grad_features: Matrix,
    pub grad_prototypes: Matrix,
}

fn score_adjoints(value: f64, grad_scores: &Matrix, v: &Matrix, prototypes: &Matrix) -> Result<ScoreLoss> {
    Ok(ScoreLoss {
        value,
        grad_features: matmul(grad_scores, prototypes)?,
        grad_prototypes: matmul_tn(grad_scores, v)?,
    })
}

/// Self-distillation loss on unlabelled rows.
#[derive(Debug, Clone)]
pub struct CruLoss {
    /// `cross_entropy + γ·regularizer`
    pub value: f64,
    pub cross_entropy: f64,
    /// `R(p̄) = Σ p̄ log p̄`
    pub regularizer: f64,
    /// Adjoint with respect to the raw student scores `v · m^sᵀ`.
    pub grad_scores: Matrix,
}

/// `(1/|B|) Σ_i −p^t_i · log p^s_i + γ Σ_c p̄_c log p̄_c`.
pub fn loss_cru(student: &Prediction, teacher: &Prediction, gamma: f64) -> Result<CruLoss> {
    if !(gamma >= 0.0) {
        return Err(Error::Parameter(format!("gamma must be non-negative, got {gamma}")));
    }
    student.probs.check_same_shape(&teacher.probs, "teacher prediction")?;
    let b = student.probs.rows();
    if b == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    let bf = b as f64;
    let tau = student.temperature;

    let mut ce = 0.0;
    for (ps, pt) in student.probs.as_slice().iter().zip(teacher.probs.as_slice()) {
        ce -= pt * ps.ln();
    }
    ce /= bf;

    let pbar = student.mean();
    let regularizer: f64 = pbar.iter().map(|&p| p * p.ln()).sum();

    // d CE / d scores = (p^s − p^t) / (|B| τ)
    let mut grad = student.probs.sub(&teacher.probs)?.scale(1.0 / (bf * tau));
    if gamma > 0.0 {
        let k = pbar.len();
        let per_prob: Vec<f64> = (0..b)
            .flat_map(|_| pbar.iter().map(|&p| (p.ln() + 1.0) / bf))
            .collect();
        let per_prob = Matrix::from_vec(b, k, per_prob)?;
        grad.axpy(gamma, &softmax_rows_backward(&student.probs, &per_prob, tau))?;
    }
    Ok(CruLoss {
        value: ce + gamma * regularizer,
        cross_entropy: ce,
        regularizer,
        grad_scores: grad,
    })
}

/// Full adjoints of `loss_cru` with respect to the student features and buffer.
pub fn loss_cru_adjoints(cru: &CruLoss, v: &Matrix, buffer: &Matrix) -> Result<ScoreLoss> {
    score_adjoints(cru.value, &cru.grad_scores, v, buffer)
}

/// Prototype cross-entropy of labelled rows against the labelled prototypes:
/// mean of `−log softmax(v · μᵀ / τ)_y`.
pub fn loss_crl(v: &Matrix, labels: &[usize], prototypes: &Matrix, tau: f64) -> Result<ScoreLoss> {
    if labels.len() != v.rows() {
        return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), v.rows())));
    }
    let k = prototypes.rows();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!("label {bad} outside the {k} labelled classes")));
    }
    if labels.is_empty() {
        return Ok(ScoreLoss {
            value: 0.0,
            grad_features: Matrix::zeros(0, v.cols()),
            grad_prototypes: Matrix::zeros(k, prototypes.cols()),
        });
    }
    let probs = predict(v, prototypes, tau)?.probs;
    let bf = labels.len() as f64;
    let mut value = 0.0;
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        value -= probs.row(i)[y].ln();
        grad.row_mut(i)[y] -= 1.0;
    }
    let grad = grad.scale(1.0 / (bf * tau));
    score_adjoints(value / bf, &grad, v, prototypes)
}

/// A loss over embedding rows with its adjoint.
#[derive(Debug, Clone)]
pub struct EmbeddingLoss {
    pub value: f64,
    pub grad: Matrix,
}

/// Supervised contrastive loss. Each anchor with at least one same-label
/// partner contributes `−(1/|N(i)|) Σ_q log(exp(z_i·z_q/τ_r) / Σ_{j≠i} exp(z_i·z_j/τ_r))`;
/// the loss is the mean over those anchors.
pub fn loss_sup(z: &Matrix, labels: &[usize], tau_r: f64) -> Result<EmbeddingLoss> {
    if labels.len() != z.rows() {
        return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), z.rows())));
    }
    if !(tau_r > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau_r}")));
    }
    let b = z.rows();
    let zero = || EmbeddingLoss {
        value: 0.0,
        grad: Matrix::zeros(b, z.cols()),
    };
    if b < 2 {
        warn!("supervised contrastive term needs two labelled rows, got {b}; contributing 0");
        return Ok(zero());
    }
    let sim = matmul_nt(z, z)?;
    let mut gs = Matrix::zeros(b, b);
    let mut value = 0.0;
    let mut anchors = 0usize;
    let mut logits = Vec::with_capacity(b - 1);
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&q| q != i && labels[q] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        logits.clear();
        logits.extend((0..b).filter(|&j| j != i).map(|j| sim.row(i)[j] / tau_r));
        let lse = logsumexp(&logits);
        let np = positives.len() as f64;
        value += positives.iter().map(|&q| lse - sim.row(i)[q] / tau_r).sum::<f64>() / np;
        let row = gs.row_mut(i);
        for j in (0..b).filter(|&j| j != i) {
            row[j] += (sim.row(i)[j] / tau_r - lse).exp() / tau_r;
        }
        for &q in &positives {
            row[q] -= 1.0 / (np * tau_r);
        }
    }
    if anchors == 0 {
        return Ok(zero());
    }
    let a = anchors as f64;
    let sym = gs.add_transposed().scale(1.0 / a);
    Ok(EmbeddingLoss {
        value: value / a,
        grad: matmul(&sym, z)?,
    })
}

/// Adjoints of the two-view instance loss.
#[derive(Debug, Clone)]
pub struct PairLoss {
    pub value: f64,
    pub grad_view1: Matrix,
    pub grad_view2: Matrix,
}

/// Unsupervised two-view contrastive loss, mean over the batch of
/// `−log(exp(z¹_i·z²_i/τ_r) / Σ_{j≠i} exp(z¹_i·w_j/τ_r))` with `w = z¹`, or
/// `w = z²` when `cross_view_denominator` is set.
pub fn loss_unsup(z1: &Matrix, z2: &Matrix, tau_r: f64, cross_view_denominator: bool) -> Result<PairLoss> {
    z1.check_same_shape(z2, "second view")?;
    if !(tau_r > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau_r}")));
    }
    let b = z1.rows();
    if b < 2 {
        return Err(Error::Contract(format!("instance loss needs a batch of at least 2, got {b}")));
    }
    let w = if cross_view_denominator { z2 } else { z1 };
    let sim = matmul_nt(z1, w)?;
    let bf = b as f64;

    // gp: adjoint w.r.t. z1_i·w_j (off-diagonal), positives handled directly.
    let mut gp = Matrix::zeros(b, b);
    let mut value = 0.0;
    let mut logits = Vec::with_capacity(b - 1);
    for i in 0..b {
        logits.clear();
        logits.extend((0..b).filter(|&j| j != i).map(|j| sim.row(i)[j] / tau_r));
        let lse = logsumexp(&logits);
        let pos = crate::numerics::dot(z1.row(i), z2.row(i)) / tau_r;
        value += lse - pos;
        let row = gp.row_mut(i);
        for j in (0..b).filter(|&j| j != i) {
            row[j] = (sim.row(i)[j] / tau_r - lse).exp() / (tau_r * bf);
        }
    }
    let pos_scale = -1.0 / (tau_r * bf);
    let mut g1 = matmul(&gp, w)?;
    g1.axpy(pos_scale, z2)?;
    let mut g2 = z1.scale(pos_scale);
    let back = matmul_tn(&gp, z1)?;
    if cross_view_denominator {
        g2.add_assign(&back)?;
    } else {
        g1.add_assign(&back)?;
    }
    Ok(PairLoss {
        value: value / bf,
        grad_view1: g1,
        grad_view2: g2,
    })
}

/// All loss values of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cru: f64,
    pub l_crl: f64,
    pub l_cr: f64,
    pub l_sup: f64,
    pub l_unsup: f64,
    pub l_ir: f64,
    pub total: f64,
    pub regularizer: f64,
}

/// `l_cr = α1·l_cru + (1−α1)·l_crl`, `l_ir = β1·l_sup + (1−β1)·l_unsup`,
/// `total = l_cr + l_ir`.
pub fn combine(l_cru: f64, l_crl: f64, l_sup: f64, l_unsup: f64, regularizer: f64, alpha1: f64, beta1: f64) -> Result<LossBreakdown> {
    for (name, w) in [("alpha1", alpha1), ("beta1", beta1)] {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Parameter(format!("{name} must be in [0, 1], got {w}")));
        }
    }
    let l_cr = alpha1 * l_cru + (1.0 - alpha1) * l_crl;
    let l_ir = beta1 * l_sup + (1.0 - beta1) * l_unsup;
    Ok(LossBreakdown {
        l_cru,
        l_crl,
        l_cr,
        l_sup,
        l_unsup,
        l_ir,
        total: l_cr + l_ir,
        regularizer,
    })
}

trait AddTransposed {
    fn add_transposed(&self) -> Matrix;
}

impl AddTransposed for Matrix {
    fn add_transposed(&self) -> Matrix {
        let mut out = self.clone();
        out.add_assign(&self.transpose()).expect("square");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradient, l2_normalize_rows};
    use crate::seeding::rng_for;
    use rand::Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_for(&[seed, 77]);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn alignment_and_symmetry_of_student_prediction() {
        let buf = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let p = student_predict(&m(&[&[0.0, 1.0, 0.0]]), &buf, 0.1).unwrap();
        let row = p.probs.row(0);
        assert!(row[1] > row[0] && row[1] > row[2]);
        let same = m(&[&[0.6, 0.8], &[0.6, 0.8], &[0.6, 0.8]]);
        let p = student_predict(&m(&[&[1.0, 0.0]]), &same, 0.1).unwrap();
        assert!(p.probs.row(0).iter().all(|&x| close(x, 1.0 / 3.0)));
    }

    #[test]
    fn teacher_temperature_sharpens_and_matches_student() {
        let v = m(&[&[0.3, 0.9]]);
        let buf = m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.7, 0.7]]);
        let max = |p: &Prediction| p.probs.row(0).iter().copied().fold(0.0, f64::max);
        assert!(max(&teacher_predict(&v, &buf, 0.04).unwrap()) >= max(&teacher_predict(&v, &buf, 0.07).unwrap()));
        assert_eq!(teacher_predict(&v, &buf, 0.1).unwrap().probs, student_predict(&v, &buf, 0.1).unwrap().probs);
    }

    #[test]
    fn cru_with_uniform_student_is_log_k() {
        let k = 5;
        let ps = Prediction { probs: Matrix::filled(3, k, 1.0 / k as f64), temperature: 0.1 };
        let pt = Prediction { probs: softmax_rows(&random(3, k, 1), 0.07).unwrap(), temperature: 0.07 };
        let out = loss_cru(&ps, &pt, 2.0).unwrap();
        assert!(close(out.cross_entropy, (k as f64).ln()));
        assert!(close(out.regularizer, -(k as f64).ln()));
        assert!(close(out.value, (k as f64).ln() - 2.0 * (k as f64).ln()));
    }

    #[test]
    fn cru_sharp_limit_vanishes() {
        let scores = m(&[&[60.0, 0.0, 0.0], &[60.0, 0.0, 0.0]]);
        let ps = Prediction { probs: softmax_rows(&scores, 1.0).unwrap(), temperature: 1.0 };
        let out = loss_cru(&ps, &ps, 2.0).unwrap();
        assert!(out.cross_entropy.abs() < 1e-20 && out.regularizer.abs() < 1e-20);
    }

    #[test]
    fn cru_self_target_without_regularizer_is_entropy() {
        let ps = Prediction { probs: softmax_rows(&random(4, 6, 2), 0.5).unwrap(), temperature: 0.5 };
        let entropy: f64 = -ps.probs.as_slice().iter().map(|p| p * p.ln()).sum::<f64>() / 4.0;
        assert!(close(loss_cru(&ps, &ps, 0.0).unwrap().value, entropy));
        assert!(loss_cru(&ps, &ps, -1.0).is_err());
    }

    #[test]
    fn crl_examples() {
        let v = m(&[&[1.0, 0.0]]);
        let protos = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let out = loss_crl(&v, &[0], &protos, 1.0).unwrap();
        assert!(close(out.value, -(1f64.exp() / (1f64.exp() + 1.0)).ln()));
        assert!((out.value - 0.3133).abs() < 1e-4);
        assert!(loss_crl(&v, &[0], &protos, 0.01).unwrap().value < 1e-40);
        let same = m(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        assert!(close(loss_crl(&random(4, 2, 3), &[0, 1, 2, 0], &same, 0.1).unwrap().value, 3f64.ln()));
        assert!(matches!(loss_crl(&v, &[2], &protos, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn sup_examples() {
        let z = Matrix::filled(4, 2, 0.5f64.sqrt());
        assert!(close(loss_sup(&z, &[1, 1, 1, 1], 1.0).unwrap().value, 3f64.ln()));
        let z = m(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let v = loss_sup(&z, &[0, 0, 1], 1.0).unwrap().value;
        assert!(close(v, -(1f64.exp() / (1f64.exp() + 1.0)).ln()));
        let single = loss_sup(&m(&[&[1.0, 0.0]]), &[0], 1.0).unwrap();
        assert_eq!(single.value, 0.0);
        assert_eq!(loss_sup(&z, &[0, 1, 2], 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn unsup_examples() {
        let z = Matrix::identity(3);
        assert!(close(loss_unsup(&z, &z, 1.0, false).unwrap().value, -(1f64.exp() / 2.0).ln()));
        let collapsed = Matrix::filled(5, 2, 0.5f64.sqrt());
        assert!(close(loss_unsup(&collapsed, &collapsed, 1.0, false).unwrap().value, 4f64.ln()));
        // first view of each pair opposite to every other instance's first view
        let z1 = m(&[&[1.0, 0.0], &[-1.0, 0.0], &[-1.0, 0.0]]);
        let z2 = z1.clone();
        let first = loss_unsup(&z1, &z2, 1.0, false).unwrap();
        let anchor0 = -(1f64.exp() / (2.0 * (-1f64).exp())).ln();
        // rows 1 and 2: numerator e, denominator e^{-1} + e^{1}
        let others = -(1f64.exp() / ((-1f64).exp() + 1f64.exp())).ln();
        assert!(close(first.value, (anchor0 + 2.0 * others) / 3.0));
        assert!(matches!(loss_unsup(&m(&[&[1.0]]), &m(&[&[1.0]]), 1.0, false), Err(Error::Contract(_))));
    }

    #[test]
    fn combine_examples() {
        let b = combine(1.0, 2.0, 0.0, 0.0, 0.0, 0.65, 0.35).unwrap();
        assert!(close(b.l_cr, 1.35));
        let b = combine(0.4, 2.0, 3.0, 0.7, 0.0, 1.0, 0.0).unwrap();
        assert_eq!((b.l_cr, b.l_ir), (0.4, 0.7));
        assert!(close(b.total, b.l_cr + b.l_ir));
        assert!(combine(0.0, 0.0, 0.0, 0.0, 0.0, 1.2, 0.5).is_err());
    }

    fn cru_value_and_grads(v: &Matrix, ms: &Matrix, pt: &Prediction, tau: f64, gamma: f64) -> Result<ScoreLoss> {
        let ps = student_predict(v, ms, tau)?;
        let cru = loss_cru(&ps, pt, gamma)?;
        loss_cru_adjoints(&cru, v, ms)
    }

    #[test]
    fn cru_adjoints_match_finite_differences() {
        for seed in 0..10 {
            let v = l2_normalize_rows(&random(8, 4, seed), 1e-12).unwrap();
            let ms = random(6, 4, seed + 100);
            let pt = teacher_predict(&random(8, 4, seed + 200), &ms, 0.07).unwrap();
            let e = check_gradient(|x| cru_value_and_grads(x, &ms, &pt, 0.1, 2.0).map(|l| (l.value, l.grad_features)), &v, 1e-4).unwrap();
            assert!(e < 1e-4, "features {e}");
            let e = check_gradient(|x| cru_value_and_grads(&v, x, &pt, 0.1, 2.0).map(|l| (l.value, l.grad_prototypes)), &ms, 1e-4).unwrap();
            assert!(e < 1e-4, "buffer {e}");
        }
    }

    #[test]
    fn crl_adjoints_match_finite_differences() {
        let labels = [0, 2, 1, 1, 0];
        for seed in 0..10 {
            let v = random(5, 3, seed);
            let mu = random(3, 3, seed + 50);
            let e = check_gradient(|x| loss_crl(x, &labels, &mu, 0.1).map(|l| (l.value, l.grad_features)), &v, 1e-4).unwrap();
            assert!(e < 1e-4);
            let e = check_gradient(|x| loss_crl(&v, &labels, x, 0.1).map(|l| (l.value, l.grad_prototypes)), &mu, 1e-4).unwrap();
            assert!(e < 1e-4);
        }
    }

    #[test]
    fn instance_adjoints_match_finite_differences() {
        for seed in 0..10 {
            let z1 = random(6, 3, seed);
            let z2 = random(6, 3, seed + 9);
            let labels = [0, 1, 0, 2, 1, 3];
            let e = check_gradient(|x| loss_sup(x, &labels, 0.5).map(|l| (l.value, l.grad)), &z1, 1e-4).unwrap();
            assert!(e < 1e-4, "sup {e}");
            for cross in [false, true] {
                let e = check_gradient(|x| loss_unsup(x, &z2, 0.5, cross).map(|l| (l.value, l.grad_view1)), &z1, 1e-4).unwrap();
                assert!(e < 1e-4, "unsup view1 {e}");
                let e = check_gradient(|x| loss_unsup(&z1, x, 0.5, cross).map(|l| (l.value, l.grad_view2)), &z2, 1e-4).unwrap();
                assert!(e < 1e-4, "unsup view2 {e}");
            }
        }
    }
}
