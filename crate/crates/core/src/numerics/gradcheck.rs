use crate::error::{MrisError, Result};

/// Magnitude below which gradient entries are compared absolutely.
const RELATIVE_FLOOR: f64 = 1e-5;

/// Central differences `(L(p + h·eᵢ) − L(p − h·eᵢ)) / 2h` for every parameter.
pub fn finite_difference_grad<F>(mut loss_fn: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(MrisError::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss_fn(&probe);
        probe[i] = orig - step;
        let down = loss_fn(&probe);
        probe[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(MrisError::NonFinite("finite-difference loss"));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// `|a − b| / max(|a|, |b|, 1e-5)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative() {
        let g = finite_difference_grad(|p| p[0] * p[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let g = finite_difference_grad(|_| 4.2, &[1.0, -2.0, 3.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let r = finite_difference_grad(|p| if p[0] > 1.0 { f64::NAN } else { 0.0 }, &[1.0], 1e-3);
        assert!(matches!(r, Err(MrisError::NonFinite(_))));
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(finite_difference_grad(|p| p[0], &[1.0], 0.0).is_err());
    }
}
