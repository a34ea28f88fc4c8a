//! Multi-modal AST transformer for smart-contract code summarization.

pub mod batch;
pub mod corpus;
pub mod metrics;
pub mod modalities;
pub mod model;
pub mod scalar;
pub mod solc;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, TensorError, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub use model::{Model32, Model64};
