//! Procedural manipulation world: task and embodiment specifications,
//! rendering, dataset storage and an oracle classifier.

mod dataset;
mod oracle;
mod render;
mod spec;

pub use dataset::{
    build_dataset, decode_record, encode_record, render_demo, Dataset, DatasetConfig, DemoSample, Split,
    LIFTED_MOTION_COLS, LIFTED_OBJECT_COLS, MOTION_COLS, OBJECT_COLS,
};
pub use oracle::{OracleClassifier, OracleConfig, OracleLabel};
pub use render::{
    effector_coverage, effector_local_centroid, plan, render_background, render_card, render_frames, Plan,
    BACKGROUND_LEVELS,
};
pub use spec::{
    sample_task, EmbodimentKind, EmbodimentSpec, ObjectParams, ObjectShape, TaskClass, TaskSpec, WorldConfig,
    GOAL_SYNONYMS, GOAL_VOCAB, OBJECT_COLORS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("sample {sample}, byte {offset}: {message}")]
    Corrupt { sample: usize, offset: usize, message: String },
    #[error("oracle accuracy {accuracy:.4} below required {required}")]
    OracleTooWeak { accuracy: f64, required: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
