//! Desk-scale training harness: synthetic scenes, a toy detector whose
//! parameters are the per-anchor outputs themselves, a first-order optimizer
//! and NMS + AP evaluation.

mod detector;
mod eval;
mod optim;
mod scene;
mod train;

pub use detector::{decode, DetectorParams, MAX_LOG_SCALE};
pub use eval::{
    average_precision, consistency_from_pairs, consistency_stats, evaluate, nms, ApResult,
    ConsistencyStats, Detection, EvalConfig, Evaluation,
};
pub use optim::{OptimConfig, Optimizer, OptimizerKind};
pub use scene::{generate_scene, SceneBatch, SceneConfig};
pub use train::{
    build_samples, loss_and_gradient, train, train_assigned, LossConfig, LossEvaluation,
    LossKind, SampleSet, StepRecord, TrainOutcome, TrainReport,
};
