//! Training orchestration: run configuration, the epoch loop, evaluation,
//! metrics files and checkpoints.

mod checkpoint;
mod config;
mod metrics;
mod trainer;

pub use checkpoint::{Checkpoint, NamedTensor, TrainState, MAGIC, VERSION};
pub use config::{LookaheadSpec, SchedulerKind, SchedulerSpec, TrainConfig, DEFAULT_EPOCHS, PARAM_BUDGET};
pub use metrics::{read_metrics, CsvLog, MetricsRow, GRAD_NORMS_HEADER, METRICS_HEADER};
pub use trainer::{
    evaluate, StepEvent, StepObserver, Trainer, BEST_CHECKPOINT, GRAD_NORMS_FILE, LAST_CHECKPOINT, METRICS_FILE,
};
