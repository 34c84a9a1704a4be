//! Experiment runners and the `chmech` command line.

pub mod cli;
pub mod experiments;
pub mod table;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] chmech_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl LabError {
    /// 2 invalid input, 3 non-convergence, 4 guard violation.
    pub fn exit_code(&self) -> i32 {
        use chmech_core::Error as E;
        match self {
            LabError::Core(E::NonConvergence { .. }) => 3,
            LabError::Core(E::Guard(_)) => 4,
            LabError::Core(_) | LabError::Usage(_) => 2,
            LabError::Write { .. } => 1,
        }
    }
}
