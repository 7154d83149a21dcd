//! Neural network building blocks with explicit backward passes.

pub mod checkpoint;
pub mod gemm;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;

pub use layers::{Mode, Module, Param};
pub use model::{AngularHead, Encoder, ModelConfig, PolarHead};
pub use tensor::Tensor;
