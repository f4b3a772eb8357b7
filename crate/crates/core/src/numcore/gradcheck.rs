use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function at `point`.
///
/// Each coordinate is perturbed by `±eps` in turn:
/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)`.
pub fn finite_difference_gradient<F>(mut f: F, point: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    let mut probe = point.clone();
    let mut grad = Tensor::zeros_like(point);
    for i in 0..point.len() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let up = f(&probe);
        probe.data_mut()[i] = x0 - eps;
        let down = f(&probe);
        probe.data_mut()[i] = x0;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite difference at coordinate {i}: f(x+eps)={up}, f(x-eps)={down}"),
            });
        }
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Largest coordinate error relative to the larger gradient's magnitude:
/// `max_i |a_i − n_i| / max(‖a‖_∞, ‖n‖_∞)`.
///
/// Measuring against the gradient's own scale keeps coordinates that are
/// legitimately near zero from dominating. Two all-zero gradients compare as
/// exactly equal.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let scale = analytic.max_abs().max(numeric.max_abs());
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
