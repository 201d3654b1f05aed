use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Adjoints smaller than this are compared on an absolute scale.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

/// Relative discrepancy between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the analytic gradient returned by `loss` at `params` with central
/// finite differences of step `step`, returning the worst relative error.
///
/// `loss` returns `(value, gradient)`; the gradient must have the shape of `params`.
pub fn check_gradient<F>(loss: F, params: &Matrix, step: f64) -> Result<f64>
where
    F: Fn(&Matrix) -> Result<(f64, Matrix)>,
{
    if !(step > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {step}")));
    }
    let (value, analytic) = loss(params)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value} at the base point")));
    }
    params.check_same_shape(&analytic, "analytic gradient")?;

    let mut probe = params.clone();
    let mut at = |k: usize, x: f64| -> Result<f64> {
        probe.as_mut_slice()[k] = x;
        let (v, _) = loss(&probe)?;
        probe.as_mut_slice()[k] = params.as_slice()[k];
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss not finite when perturbing entry {k}")));
        }
        Ok(v)
    };
    let mut worst = 0.0_f64;
    for k in 0..params.as_slice().len() {
        let orig = params.as_slice()[k];
        // fourth-order central stencil
        let p1 = at(k, orig + step)?;
        let m1 = at(k, orig - step)?;
        let p2 = at(k, orig + 2.0 * step)?;
        let m2 = at(k, orig - 2.0 * step)?;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
        worst = worst.max(relative_error(analytic.as_slice()[k], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::{log_softmax_rows, softmax_rows};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let p = Matrix::from_rows(&[[1.5, -2.0, 0.25]]).unwrap();
        let err = check_gradient(|x| Ok((0.5 * x.frobenius_norm().powi(2), x.clone())), &p, 1e-4)
            .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn softmax_cross_entropy_on_random_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = Matrix::from_vec(4, 6, (0..24).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap();
        let targets = [0usize, 5, 2, 2];
        let loss = |x: &Matrix| {
            let lp = log_softmax_rows(x, 1.0)?;
            let p = softmax_rows(x, 1.0)?;
            let mut grad = p.clone();
            let mut value = 0.0;
            for (i, &t) in targets.iter().enumerate() {
                value -= lp[(i, t)];
                grad[(i, t)] -= 1.0;
            }
            Ok((value / 4.0, grad.scale(0.25)))
        };
        let err = check_gradient(loss, &logits, 1e-4).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let err = check_gradient(|x| Ok((x.sum() * 3.0, Matrix::filled(1, 2, 1.0))), &p, 1e-4)
            .unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = Matrix::zeros(1, 1);
        let r = check_gradient(|x| Ok((f64::NAN, x.clone())), &p, 1e-4);
        assert!(matches!(r, Err(Error::Numeric(_))));
        let r = check_gradient(|x| Ok((0.0, x.clone())), &p, 0.0);
        assert!(matches!(r, Err(Error::Parameter(_))));
    }
}
