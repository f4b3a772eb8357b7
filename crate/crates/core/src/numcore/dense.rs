use super::LayerGradients;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(op: &'static str, input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    let [n, d] = input.dims2(op)?;
    let [wd, e] = weight.dims2(op)?;
    if d != wd {
        return Err(Error::shape(
            op,
            format!("input width {d} does not match weight rows {wd}"),
        ));
    }
    Ok((n, d, e))
}

/// Affine map `input · weight + bias` for an `N×D` input and `D×E` weight.
pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d, e) = check("fully_connected", input, weight)?;
    bias.expect_shape("fully_connected bias", &[e])?;
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(n * e);
    for r in 0..n {
        let row = &x[r * d..][..d];
        let mut acc = bias.data().to_vec();
        for (k, &xv) in row.iter().enumerate() {
            for (a, wv) in acc.iter_mut().zip(&w[k * e..][..e]) {
                *a += xv * wv;
            }
        }
        out.extend(acc);
    }
    Tensor::new(&[n, e], out)
}

/// Backward of [`fully_connected`]. `d_params` is `[d_weight, d_bias]`.
pub fn fully_connected_backward(input: &Tensor, weight: &Tensor, d_output: &Tensor) -> Result<LayerGradients> {
    let (n, d, e) = check("fully_connected_backward", input, weight)?;
    d_output.expect_shape("fully_connected_backward d_output", &[n, e])?;
    let x = input.data();
    let w = weight.data();
    let dy = d_output.data();

    let mut dx = vec![0.0; n * d];
    let mut dw = vec![0.0; d * e];
    let mut db = vec![0.0; e];
    for r in 0..n {
        let up = &dy[r * e..][..e];
        for (b, u) in db.iter_mut().zip(up) {
            *b += u;
        }
        for k in 0..d {
            let xv = x[r * d + k];
            let w_row = &w[k * e..][..e];
            dx[r * d + k] = w_row.iter().zip(up).map(|(a, b)| a * b).sum();
            for (g, u) in dw[k * e..][..e].iter_mut().zip(up) {
                *g += xv * u;
            }
        }
    }
    Ok(LayerGradients {
        d_input: Tensor::new(&[n, d], dx)?,
        d_params: vec![Tensor::new(&[d, e], dw)?, Tensor::new(&[e], db)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight() {
        let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = fully_connected(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn sums_two_inputs() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        let y = fully_connected(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn rejects_inner_mismatch() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 4]);
        assert!(fully_connected(&x, &w, &Tensor::zeros(&[4])).is_err());
        assert!(fully_connected_backward(&x, &w, &Tensor::zeros(&[1, 4])).is_err());
    }
}
