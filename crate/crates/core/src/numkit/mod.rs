//! Small dense-tensor kernel: the handful of primitives the embedding and
//! packer code needs, all in `f64` with a fixed accumulation order.

pub mod io;
mod rng;
mod tensor;

pub use rng::Rng;
pub use tensor::{linear_interp_resize, matmul, mean_pool_regions, softmax, softmax_lastdim, Tensor};
