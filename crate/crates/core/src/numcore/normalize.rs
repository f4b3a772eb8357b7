use crate::error::Result;
use crate::tensor::Tensor;

/// Floor on row norms used by [`l2_normalize`].
pub const NORM_EPSILON: f64 = 1e-12;

/// Divides each row of an `N×D` tensor by `max(‖row‖₂, epsilon)`.
pub fn l2_normalize(input: &Tensor, epsilon: f64) -> Result<Tensor> {
    let [_, d] = input.dims2("l2_normalize")?;
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        let denom = row_norm(row).max(epsilon);
        row.iter_mut().for_each(|v| *v /= denom);
    }
    Ok(out)
}

/// Backward of [`l2_normalize`].
///
/// For rows with `‖x‖ ≥ ε` this is `(g − y·(y·g)) / ‖x‖`; guarded rows are a
/// plain scaling by `1/ε`.
pub fn l2_normalize_backward(input: &Tensor, d_output: &Tensor, epsilon: f64) -> Result<Tensor> {
    let [_, d] = input.dims2("l2_normalize_backward")?;
    d_output.expect_shape("l2_normalize_backward", input.shape())?;
    let mut out = Vec::with_capacity(input.len());
    for (x, g) in input.data().chunks_exact(d).zip(d_output.data().chunks_exact(d)) {
        let norm = row_norm(x);
        if norm >= epsilon {
            let y: Vec<f64> = x.iter().map(|v| v / norm).collect();
            let yg: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
            out.extend(y.iter().zip(g).map(|(yv, gv)| (gv - yv * yg) / norm));
        } else {
            out.extend(g.iter().map(|gv| gv / epsilon));
        }
    }
    Tensor::new(input.shape(), out)
}

pub(crate) fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let x = Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap();
        let y = l2_normalize(&x, NORM_EPSILON).unwrap();
        assert_eq!(y.data(), &[0.6, 0.8]);
    }

    #[test]
    fn unit_vector_unchanged() {
        let x = Tensor::new(&[1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(l2_normalize(&x, NORM_EPSILON).unwrap(), x);
    }

    #[test]
    fn zero_row_stays_zero() {
        let x = Tensor::zeros(&[2, 4]);
        let y = l2_normalize(&x, NORM_EPSILON).unwrap();
        assert!(y.is_finite());
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn output_rows_have_unit_norm() {
        let x = Tensor::from_fn(&[5, 7], |i| ((i * 31 % 17) as f64) - 8.0);
        let y = l2_normalize(&x, NORM_EPSILON).unwrap();
        for row in y.data().chunks_exact(7) {
            assert!((row_norm(row) - 1.0).abs() <= 1e-12);
        }
    }
}
