//! A small differentiable-operations core.
//!
//! There is no tape. Each forward op returns a fresh [`Tensor4`] with a zeroed
//! gradient buffer; the matching backward op reads the output's `grad` and
//! accumulates into the input's `grad` and into any parameter gradients.
//! Callers drive the chain in reverse order by hand.

mod activation;
mod adam;
mod conv;
mod dense;
pub mod gradcheck;
mod safe_div;
mod tensor;

pub use activation::{
    relu_backward, relu_forward, sigmoid, sigmoid_backward, sigmoid_forward, softmax_backward,
    softmax_forward,
};
pub use adam::{adam_update, Adam, AdamConfig, Parameterized};
pub(crate) use conv::conv2d_backward_params;
pub use conv::{conv2d_backward, conv2d_forward, extend_input_channels, ConvFilter, Padding};
pub use dense::{dense_backward, dense_forward, Dense};
pub use gradcheck::{finite_diff_check, Differentiable, FnOp};
pub use safe_div::{clip_denominator, safe_div_backward, safe_div_forward};
pub use tensor::{concat_channels, split_channels_backward, Shape4, Tensor4};
