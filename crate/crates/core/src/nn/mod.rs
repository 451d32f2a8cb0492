//! Minimal tensor, convolution, autodiff and optimizer substrate.

mod activation;
pub mod checkpoint;
pub mod conv;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use activation::Activation;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use conv::{conv2d, transposed_conv2d};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{GaussianInit, Param, ParamSet};
pub use real::{gemm, Real};
pub use tape::{Tape, Var};
pub use tensor::Tensor4;
