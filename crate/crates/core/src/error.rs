use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MadmError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("palette error: {0}")]
    Palette(String),

    #[error("codec error: class id {class} has no palette color (palette holds {colors})")]
    Codec { class: u32, colors: usize },

    #[error("diffusion step {k} outside schedule range 0..={k_max}")]
    StepOutOfRange { k: usize, k_max: usize },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("class count mismatch: expected {expected}, found {found}")]
    ClassCount { expected: usize, found: usize },

    #[error(
        "non-finite loss at iteration {iteration}: L_s={l_s} L_t={l_t} L_s_reg={l_s_reg} L_t_reg={l_t_reg}"
    )]
    NonFiniteLoss {
        iteration: usize,
        l_s: f64,
        l_t: f64,
        l_s_reg: f64,
        l_t_reg: f64,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MadmError> = std::result::Result<T, E>;
