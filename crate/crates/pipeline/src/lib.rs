//! IO, transport, and command layer over the core library. The binary is a
//! thin argument parser; everything testable lives here.

pub use hivscreen_core as core;

pub mod artifacts;
pub mod client;
pub mod commands;
pub mod config;
pub mod server;

/// Command outcomes map one-to-one onto process exit codes: configuration
/// problems (including digest mismatches) exit 2, stage failures exit 3,
/// an unreachable completion server exits 4.
#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("stage {stage} failed: {reason}")]
    Stage { stage: &'static str, reason: String },
    #[error("server unreachable: {0}")]
    Unreachable(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Config(_) => 2,
            StageError::Stage { .. } => 3,
            StageError::Unreachable(_) => 4,
        }
    }
}
