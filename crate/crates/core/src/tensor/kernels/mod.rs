//! Raw numeric kernels on flat row-major buffers. The autodiff layer wraps
//! these; they know nothing about tapes.

pub mod broadcast;
pub mod conv;

pub use broadcast::{broadcast_binary, broadcast_shape, reduce_to_shape};
pub use conv::{conv2d_backward_input, conv2d_backward_params, conv2d_forward, ConvGeometry, ConvSpec};
