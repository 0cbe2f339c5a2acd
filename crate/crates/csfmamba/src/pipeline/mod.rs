//! End-to-end workflows: configuration, training, evaluation, checkpoints,
//! classification metrics, scene map rendering, scan benchmarking, and
//! gradient verification.

mod checkpoint;
mod config;
mod eval;
mod metrics;
mod prep;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, BestEpoch, EpochRecord, LoadedCheckpoint, Manifest,
    TensorRecord, CHECKPOINT_FORMAT, MANIFEST_FILE, WEIGHTS_FILE,
};
pub use config::{PipelineConfig, PrecisionMode, TrainConfig};
pub use eval::{evaluate, predict_subset, EvalReport, SplitChoice};
pub use metrics::{
    confusion_and_metrics, metrics_from_confusion, ConfusionMatrix, MetricsReport,
};
pub use prep::{check_dataset, fit_inputs, replay_inputs};
pub use train::{train, TrainOutcome, TRAIN_LOG_FILE};
