//! Minimal differentiable building blocks for PointNet-style networks.
//!
//! Backpropagation is hand-written per layer: every forward pass returns a
//! tape holding the activations its backward pass needs.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;

use thiserror::Error;

pub use adam::Adam;
pub use layers::{maxpool_points, Linear, Mlp, MlpTape};
pub use loss::{cross_entropy, huber, HUBER_DELTA};
pub use model::{Model, ModelConfig};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input")]
    EmptyInput,
    #[error("class label {0} out of range")]
    Label(usize),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
