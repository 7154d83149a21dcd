//! Pretraining, fine-tuning, evaluation and the experiment grid.

pub mod data;
pub mod downstream;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod pretrain;

pub use data::{LabeledSet, PretrainSet};
pub use downstream::{downstream_train, DownstreamConfig, DownstreamOutcome};
pub use eval::{evaluate_downstream, evaluate_pretrain, EvalReport};
pub use pretrain::{pretrain, PretrainConfig};
