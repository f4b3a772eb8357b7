use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over spatial positions: `N×C×H×W -> N×C`.
pub fn global_average_pool(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("global_average_pool")?;
    let hw = h * w;
    let data = input
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new(&[n, c], data)
}

/// Spreads each `d_output[n, c]` evenly over the `H·W` positions.
pub fn global_average_pool_backward(input_shape: &[usize], d_output: &Tensor) -> Result<Tensor> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::shape(
            "global_average_pool_backward",
            format!("expected a 4-d input shape, got {input_shape:?}"),
        ));
    };
    d_output.expect_shape("global_average_pool_backward", &[n, c])?;
    let hw = h * w;
    let scale = 1.0 / hw as f64;
    let data = d_output
        .data()
        .iter()
        .flat_map(|&d| std::iter::repeat_n(d * scale, hw))
        .collect();
    Tensor::new(input_shape, data)
}
