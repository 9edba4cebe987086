//! Network layers with hand-written backward passes, all in 64-bit floats.

pub mod attention;
pub mod batchnorm;
pub mod block;
pub mod config;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod model_io;
pub mod network;
pub mod params;
pub mod pool;
pub mod tensor;

pub use config::{BlockSpec, NetworkConfig, CLASS_COUNT};
pub use model_io::{load_model, read_model, save_model, write_model, ModelIoError};
pub use network::{forward_batch, network_backward, predict, predict_batch, ForwardPass};
pub use params::{count_parameters, DType, Gradients, ModelParams, ParamTensor};
pub use tensor::{concat_height, split_frequency, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("missing cached intermediates: {0}")]
    MissingCache(&'static str),
    #[error("batch norm has no running statistics for inference")]
    NoRunningStats,
    #[error("missing parameter tensor {0}")]
    MissingParam(String),
    #[error("duplicate parameter tensor {0}")]
    DuplicateParam(String),
}

/// Batch-norm behaviour: batch statistics (train) or running statistics (infer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
