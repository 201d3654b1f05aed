//! Differentiable dense operations. Each forward op has a matching `*_backward`
//! that maps the adjoint of the output to adjoints of the inputs.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

pub const DEFAULT_NORM_EPS: f64 = 1e-12;

/// `a · b`
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::Dimension(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(b.row(p)) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "matmul_nt {}x{} by ({}x{})ᵀ",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let arow = a.row(i);
        for j in 0..b.rows() {
            out[(i, j)] = dot(arow, b.row(j));
        }
    }
    Ok(out)
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::Dimension(format!(
            "matmul_tn ({}x{})ᵀ by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.cols(), b.cols());
    for r in 0..a.rows() {
        let brow = b.row(r);
        for (i, &av) in a.row(r).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out.row_mut(i).iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// Adjoints of `c = a · b`: returns `(ā, b̄) = (c̄ bᵀ, aᵀ c̄)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, grad_out: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((matmul_nt(grad_out, b)?, matmul_tn(a, grad_out)?))
}

/// Row-wise unit normalization. Also returns the original row norms, which the
/// backward pass needs.
pub fn l2_normalize_rows_with_norms(m: &Matrix, eps: f64) -> Result<(Matrix, Vec<f64>)> {
    if eps <= 0.0 {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let norm = dot(row, row).sqrt();
        if !(norm >= eps) {
            return Err(Error::DegenerateInput(format!(
                "row {i} has norm {norm:e} below {eps:e}"
            )));
        }
        row.iter_mut().for_each(|x| *x /= norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

pub fn l2_normalize_rows(m: &Matrix, eps: f64) -> Result<Matrix> {
    l2_normalize_rows_with_norms(m, eps).map(|(out, _)| out)
}

/// Adjoint of `y = x / ‖x‖`: `x̄ = (ȳ − y (y·ȳ)) / ‖x‖`.
pub fn l2_normalize_rows_backward(normalized: &Matrix, norms: &[f64], grad_out: &Matrix) -> Matrix {
    let mut out = grad_out.clone();
    for i in 0..normalized.rows() {
        let y = normalized.row(i);
        let proj = dot(y, grad_out.row(i));
        let n = norms[i];
        for (o, &yv) in out.row_mut(i).iter_mut().zip(y) {
            *o = (*o - yv * proj) / n;
        }
    }
    out
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Log-sum-exp of a slice with max subtraction. Returns `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `softmax(m / temperature)` per row.
pub fn softmax_rows(m: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    let mut out = m.scale(1.0 / temperature);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    Ok(out)
}

/// `log softmax(m / temperature)` per row.
pub fn log_softmax_rows(m: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    let mut out = m.scale(1.0 / temperature);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let lse = logsumexp(row);
        row.iter_mut().for_each(|x| *x -= lse);
    }
    Ok(out)
}

/// Adjoint of `p = softmax(m / T)` with respect to `m`, given `p` and `p̄`.
pub fn softmax_rows_backward(probs: &Matrix, grad_out: &Matrix, temperature: f64) -> Matrix {
    let mut out = grad_out.clone();
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let inner = dot(p, grad_out.row(i));
        for (o, &pv) in out.row_mut(i).iter_mut().zip(p) {
            *o = pv * (*o - inner) / temperature;
        }
    }
    out
}
