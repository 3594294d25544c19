//! Training orchestration, checkpoints, evaluation and ablations.

mod ablate;
mod checkpoint;
pub mod checks;
mod config;
mod eval;
pub mod metrics;
mod train;

pub use ablate::{run_ablation_suite, AblationReport, Arm, ArmResult, Comparison};
pub use checkpoint::{load_backbone, save_backbone, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use eval::{
    eval_disentanglement, eval_generation, evaluate, held_out_mi, DisentanglementMetrics, GenerationMetrics, MetricsReport,
    ProjectionPoint, KMEANS_RESTARTS,
};
pub use train::{grad_csv, loss_csv, StepLog, Trainer};

use thiserror::Error;

use crate::encoders::EncoderError;
use crate::generator::GeneratorError;
use crate::geometry::GeometryError;
use crate::numerics::NumericsError;
use crate::objectives::ObjectiveError;
use crate::synthworld::SynthError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("backbone unavailable: {0}")]
    MissingBackbone(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("evaluation: {0}")]
    Eval(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
