//! Datasets, loss, optimiser, error metrics and the training loop.

pub mod dataset;
pub mod extxyz;
pub mod loss;
pub mod metrics;
pub mod optimizer;
pub mod synth;
pub mod trainer;

pub use dataset::{Dataset, Split};
pub use extxyz::{parse_extxyz, write_extxyz};
pub use loss::{loss, LossWeights, Labels};
pub use metrics::{tail_metrics, validation_ratio, TailMetrics};
pub use optimizer::Adam;
pub use synth::{synth_dataset, synth_dataset_with, Morse, SynthKind, SynthPotential};
pub use trainer::{
    batch_gradients, evaluate, log_to_jsonl, predict_all, series, train, train_with, EvalMetrics, LogRecord,
    TrainConfig, TrainReport,
};
