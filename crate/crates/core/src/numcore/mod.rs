//! Dense tensors, a small reverse-mode tape and plain SGD.

mod ops;
mod sgd;
mod tape;
mod tensor;

pub use ops::{add, add_bias, conv2d, mse_loss, relu};
pub use sgd::{sgd_step, sgd_step_in_place, SgdConfig};
pub use tape::{GradTape, Gradients, Var};
pub use tensor::Tensor;
