//! Batch experiments for regularized least squares: parameter sweeps,
//! scaling-exponent fits and report files, plus the configuration types
//! behind the `rerm` command line.

pub mod commands;
pub mod config;
pub mod fit;
pub mod report;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

/// A configuration that cannot be read, parsed or satisfied.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Read(PathBuf, #[source] std::io::Error),
    #[error("malformed configuration: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] rerm::Error),
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
    Ok(serde_json::from_str(&text)?)
}
