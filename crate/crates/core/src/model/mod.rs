//! The transformer, its loss and gradient check, staged training and
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod params;
pub mod train;
pub mod transformer;

pub use checkpoint::Checkpoint;
pub use config::{Fusion, ModelConfig};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::loss;
pub use params::{ParamGroup, ParamIndex, Parameters, TensorId, TensorInfo};
pub use transformer::{HeadLogits, KvCache, LossStats, Model, StepInput};
pub use train::{train_stage, Optimizer, StageMetrics, StagePlan, TrainConfig};
