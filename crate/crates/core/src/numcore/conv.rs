use super::LayerGradients;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output side length of a strided, padded convolution.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

struct ConvGeometry {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn geometry(op: &'static str, input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<ConvGeometry> {
    let [n, c_in, h, w] = input.dims4(op)?;
    let [c_out, k_in, kh, kw] = kernel.dims4(op)?;
    if stride == 0 {
        return Err(Error::invalid("stride", "must be positive"));
    }
    if k_in != c_in {
        return Err(Error::shape(
            op,
            format!("input has {c_in} channels but kernel expects {k_in}"),
        ));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape(
            op,
            format!("padded input {h}x{w} (pad {pad}) smaller than kernel {kh}x{kw}"),
        ));
    }
    Ok(ConvGeometry {
        n,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh: conv2d_output_size(h, kh, stride, pad),
        ow: conv2d_output_size(w, kw, stride, pad),
    })
}

/// Input coordinate hit by output coordinate `o` at kernel tap `k`, if any.
#[inline]
fn source(o: usize, k: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
    let pos = (o * stride + k).checked_sub(pad)?;
    (pos < limit).then_some(pos)
}

/// For each kernel tap `(i, ky, kx)`, the input offset read by every output
/// position of one image, or `None` where the tap lands in the padding.
/// Row-major `[c_in·kh·kw][oh·ow]`, matching the kernel's OIHW layout.
fn tap_offsets(g: &ConvGeometry, stride: usize, pad: usize) -> Vec<Option<usize>> {
    let positions = g.oh * g.ow;
    let mut taps = Vec::with_capacity(g.c_in * g.kh * g.kw * positions);
    for i in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        taps.push(
                            source(oy, ky, stride, pad, g.h)
                                .zip(source(ox, kx, stride, pad, g.w))
                                .map(|(iy, ix)| (i * g.h + iy) * g.w + ix),
                        );
                    }
                }
            }
        }
    }
    taps
}

/// Unfolds one image into its `[c_in·kh·kw][oh·ow]` patch matrix.
fn im2col(image: &[f64], taps: &[Option<usize>]) -> Vec<f64> {
    taps.iter().map(|t| t.map_or(0.0, |idx| image[idx])).collect()
}

/// 2-d cross-correlation over an NCHW batch with an OIHW kernel.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = geometry("conv2d", input, kernel, stride, pad)?;
    bias.expect_shape("conv2d bias", &[g.c_out])?;

    let taps = tap_offsets(&g, stride, pad);
    let positions = g.oh * g.ow;
    let rows = g.c_in * g.kh * g.kw;
    let image_len = g.c_in * g.h * g.w;
    let k = kernel.data();
    let mut out = vec![0.0; g.n * g.c_out * positions];
    for n in 0..g.n {
        let cols = im2col(&input.data()[n * image_len..][..image_len], &taps);
        for o in 0..g.c_out {
            let plane = &mut out[(n * g.c_out + o) * positions..][..positions];
            plane.fill(bias.data()[o]);
            for (r, &wv) in k[o * rows..][..rows].iter().enumerate() {
                for (acc, &xv) in plane.iter_mut().zip(&cols[r * positions..][..positions]) {
                    *acc += wv * xv;
                }
            }
        }
    }
    Tensor::new(&[g.n, g.c_out, g.oh, g.ow], out)
}

/// Backward pass of [`conv2d`]. `d_params` is `[d_kernel, d_bias]`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
    d_output: &Tensor,
) -> Result<LayerGradients> {
    let g = geometry("conv2d_backward", input, kernel, stride, pad)?;
    d_output.expect_shape("conv2d_backward d_output", &[g.n, g.c_out, g.oh, g.ow])?;

    let taps = tap_offsets(&g, stride, pad);
    let positions = g.oh * g.ow;
    let rows = g.c_in * g.kh * g.kw;
    let image_len = g.c_in * g.h * g.w;
    let k = kernel.data();
    let dy = d_output.data();
    let mut dx = vec![0.0; input.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; g.c_out];
    let mut d_cols = vec![0.0; rows * positions];
    for n in 0..g.n {
        let cols = im2col(&input.data()[n * image_len..][..image_len], &taps);
        d_cols.fill(0.0);
        for o in 0..g.c_out {
            let dy_plane = &dy[(n * g.c_out + o) * positions..][..positions];
            db[o] += dy_plane.iter().sum::<f64>();
            for r in 0..rows {
                let col = &cols[r * positions..][..positions];
                dk[o * rows + r] += dy_plane.iter().zip(col).map(|(a, b)| a * b).sum::<f64>();
                let wv = k[o * rows + r];
                for (dc, &up) in d_cols[r * positions..][..positions].iter_mut().zip(dy_plane) {
                    *dc += wv * up;
                }
            }
        }
        let dx_image = &mut dx[n * image_len..][..image_len];
        for (tap, &dc) in taps.iter().zip(&d_cols) {
            if let Some(idx) = tap {
                dx_image[*idx] += dc;
            }
        }
    }
    Ok(LayerGradients {
        d_input: Tensor::new(input.shape(), dx)?,
        d_params: vec![Tensor::new(kernel.shape(), dk)?, Tensor::new(&[g.c_out], db)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_3x3() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::from_fn(&[2, 1, 4, 5], |i| (i as f64 * 0.37).sin());
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn output_size_arithmetic() {
        assert_eq!(conv2d_output_size(32, 3, 2, 1), 16);
        assert_eq!(conv2d_output_size(8, 3, 2, 1), 4);
        assert_eq!(conv2d_output_size(4, 1, 1, 0), 4);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn rejects_kernel_larger_than_padded_input() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 1).is_err());
        assert!(conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 2).is_ok());
    }

    #[test]
    fn backward_rejects_wrong_upstream_shape() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        let dy = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv2d_backward(&x, &k, 1, 0, &dy).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = Tensor::from_fn(&[1, 2, 5, 5], |i| i as f64);
        let k = Tensor::from_fn(&[3, 2, 3, 3], |i| 0.1 * i as f64);
        let dy = Tensor::zeros(&[1, 3, 3, 3]);
        let g = conv2d_backward(&x, &k, 2, 1, &dy).unwrap();
        assert_eq!(g.d_input.max_abs(), 0.0);
        assert!(g.d_params.iter().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let x = Tensor::full(&[1, 1, 1, 1], 3.0);
        let k = Tensor::full(&[1, 1, 1, 1], -2.0);
        let dy = Tensor::full(&[1, 1, 1, 1], 0.5);
        let g = conv2d_backward(&x, &k, 1, 0, &dy).unwrap();
        assert_eq!(g.d_input.data(), &[-1.0]);
        assert_eq!(g.d_params[0].data(), &[1.5]);
        assert_eq!(g.d_params[1].data(), &[0.5]);
    }
}
