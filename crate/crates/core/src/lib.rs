//! Unified spatio-temporal traffic forecasting and imputation.
//!
//! A scaled input passes through a perception pathway (temporal embedding,
//! grouped convolution, GRU) into a partially frozen transformer whose top
//! blocks carry low-rank adapters and an input-dependent attention bias. A
//! per-node recurrent guidance signal is blended with the transformer output
//! through a learned gate. One model serves both forecasting and masked
//! imputation.

pub mod backbone;
pub mod bias;
pub mod checkpoint;
pub mod conditioning;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod fusion;
pub mod guidance;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use config::{DataConfig, ModelConfig, RunConfig, TrainConfig};
pub use error::{Error, Result};
pub use fusion::Task;
pub use model::{Input, Model, Output};
