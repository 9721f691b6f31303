//! Experiment driver behind the `ddrci` binary.

pub mod commands;
pub mod config;
pub mod report;

use std::path::Path;

use ddrci::synthesis::{RciSolution, SynthesisError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("synthesis infeasible: {0}")]
    Infeasible(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("numerical breakdown: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Infeasible(_) => 2,
            CliError::Verification(_) => 3,
            CliError::Input(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<SynthesisError> for CliError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::SynthesisInfeasible(r) => CliError::Infeasible(r.to_string()),
            SynthesisError::EmptyModelSet => CliError::Infeasible(e.to_string()),
            SynthesisError::NumericalBreakdown(m) => CliError::Numerical(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// Robust over every model consistent with the data.
    Data,
    /// For the true plant only.
    Model,
}

/// Solution artifact written by `synth`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub schema: u32,
    pub mode: SynthMode,
    /// Trajectory length used in data mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    pub solution: RciSolution<f64>,
}

impl SolutionFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let f: Self = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if f.schema != config::SCHEMA_VERSION {
            return Err(CliError::Input(format!(
                "{}: unsupported schema {}",
                path.display(),
                f.schema
            )));
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Input(e.to_string()))?;
        text.push('\n');
        write_file(path, text.as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
