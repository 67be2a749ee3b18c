//! Residual convolutional network mapping overlapped-echo images to T2:
//! layers with analytic gradients, SGD training, full-image inference with
//! a guided filter, OLNC checkpoints and finite-difference gradient checks.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gemm;
pub mod gradcheck;
pub mod infer;
pub mod layers;
pub mod network;
pub mod sgd;
pub mod tensor;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use data::{Pair, Prepared};
pub use error::{NetError, Result};
pub use gemm::Gemm;
pub use infer::{guided_filter, infer_t2};
pub use network::{Network, NetworkConfig};
pub use tensor::Tensor4;
pub use train::{train, LogRow, TrainConfig, TrainOutcome};

pub type NetworkF32 = Network<f32>;
pub type NetworkF64 = Network<f64>;
pub type Tensor4F32 = Tensor4<f32>;
pub type Tensor4F64 = Tensor4<f64>;
