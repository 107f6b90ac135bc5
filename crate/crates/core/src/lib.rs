//! Deep-learning forward primitives built on one batch-reduce GEMM kernel.
//!
//! * [`brgemm`]: the kernel, its FP64 oracle, batched/strided baselines and the tile planner.
//! * [`tensor`]: dense and blocked FP32 tensors and layout transforms.
//! * [`lstm`], [`cnn`], [`fc`]: LSTM cell, direct convolution and fully-connected
//!   forward passes, each with a dense reference implementation.
//! * [`parallel`]: deterministic static work partitioning.

pub mod activation;
pub mod brgemm;
pub mod cnn;
mod error;
pub mod fc;
pub mod lstm;
pub mod parallel;
pub mod tensor;

pub use error::{Error, Result};
