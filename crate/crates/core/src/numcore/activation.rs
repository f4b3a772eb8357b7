use crate::error::Result;
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes `d_output` where `input > 0`.
pub fn relu_backward(input: &Tensor, d_output: &Tensor) -> Result<Tensor> {
    d_output.expect_shape("relu_backward", input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(d_output.data())
        .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}
