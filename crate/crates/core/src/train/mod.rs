//! Training, transfer, evaluation, and gradient verification.

pub mod env;
pub mod evaluate;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod trainer;
pub mod transfer;

pub use evaluate::{evaluate, EvalOptions, EvalSummary};
pub use loss::LossWeights;
pub use trainer::{
    metrics_csv, train, write_metrics_csv, MetricsRecord, TrainConfig, TrainOutput,
    METRICS_CSV_HEADER,
};
pub use transfer::{transfer_beam_head, TransferOutput};
