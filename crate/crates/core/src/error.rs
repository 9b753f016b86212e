//! Errors shared by the model stages.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad input shape: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("label {label} out of range for {class_count} classes")]
    Range { label: u32, class_count: usize },
    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: u64 },
    #[error("task order violated: {0}")]
    MissingPretrain(String),
}

pub fn shape_err(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> ModelError {
    ModelError::Shape {
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}
