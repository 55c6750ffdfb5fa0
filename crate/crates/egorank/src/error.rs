use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tensor is not attached to this tape")]
    Detached,

    #[error("scene {scene_id}: invalid field {field}: {msg}")]
    InvalidScene {
        scene_id: String,
        field: String,
        msg: String,
    },

    #[error("duplicate scene_id {0}")]
    DuplicateSceneId(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("labels missing: {0}")]
    MissingLabels(String),

    #[error("baseline B-3 requires distance_to_ego on every object (scene {0})")]
    MissingDistances(String),

    #[error("non-finite loss at epoch {epoch}, step {step}; training aborted")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("icc undefined: {0}")]
    IccUndefined(String),

    #[error("{0}")]
    Invalid(String),

    #[error("malformed record at line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
