//! Experiment orchestration, file formats, and seeding for the `dflsim-core`
//! D-FL simulator: everything that touches the filesystem or a clock lives
//! here, keeping the core crate pure.

pub mod config;
pub mod io;
pub mod recipes;
pub mod runner;
pub mod seeding;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// Config validation failure (exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// Runtime failure with the failing stage named (exit code 3).
    #[error("stage {stage}: {message}")]
    Runtime { stage: &'static str, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    pub fn runtime(stage: &'static str, message: impl ToString) -> Self {
        SimError::Runtime { stage, message: message.to_string() }
    }

    /// Process exit code per the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 2,
            _ => 3,
        }
    }
}
