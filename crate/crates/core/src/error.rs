use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dish {dish} is outside the base support of size {base_size}")]
    DishOutOfSupport { dish: u32, base_size: u32 },

    #[error("context of length {len} exceeds the tree depth {depth}")]
    ContextTooLong { len: usize, depth: usize },

    #[error("stale seating trace: {0}")]
    StaleTrace(String),

    #[error("invalid hyperparameters at level {level}: discount {discount}, strength {strength}")]
    InvalidHyperparams {
        level: usize,
        discount: f64,
        strength: f64,
    },

    #[error("illegal transition {transition} in configuration {config}")]
    IllegalTransition { transition: String, config: String },

    #[error("derivation did not reach a terminal configuration")]
    NonTerminalDerivation,

    #[error("no gold-consistent continuation: {0}")]
    NoOracleContinuation(String),

    #[error("invalid dependency tree: {0}")]
    InvalidTree(String),

    #[error("decoder beam became empty")]
    EmptyBeam,

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("invalid settings: {0}")]
    Settings(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
