//! Layer primitives with explicit backward passes, plus a central
//! finite-difference gradient oracle.
//!
//! Every layer is a pure function of its inputs. Backward functions take the
//! forward inputs again (nothing is hidden in a tape) and return a
//! [`LayerGradients`].

mod activation;
mod conv;
mod dense;
mod gradcheck;
mod normalize;
mod pool;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d, conv2d_backward, conv2d_output_size};
pub use dense::{fully_connected, fully_connected_backward};
pub use gradcheck::{finite_difference_gradient, relative_error};
pub use normalize::{l2_normalize, l2_normalize_backward, NORM_EPSILON};
pub use pool::{global_average_pool, global_average_pool_backward};

use crate::tensor::Tensor;

/// Gradients of a scalar objective with respect to a layer's input and
/// parameters, in the order the layer declares its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub d_input: Tensor,
    pub d_params: Vec<Tensor>,
}
