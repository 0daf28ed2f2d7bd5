//! Pipeline behind the `ctxgeom` command: suite generation, bundle validation,
//! analysis, reporting and a planted synthetic bundle for end-to-end checks.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 bundle validation failure,
//! 3 infeasible generation request.

use std::path::Path;

use thiserror::Error;

pub mod analyze;
pub mod cli;
pub mod config;
pub mod generate;
pub mod report;
pub mod svg;
pub mod synth;
pub mod validate;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid bundle: {0}")]
    Validation(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Input(String),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Infeasible(_) => 3,
            _ => 1,
        }
    }
}

impl From<ctxgeom::store::StoreError> for PipelineError {
    fn from(e: ctxgeom::store::StoreError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<ctxgeom::gridworld::GridError> for PipelineError {
    fn from(e: ctxgeom::gridworld::GridError) -> Self {
        use ctxgeom::gridworld::GridError::*;
        match e {
            Infeasible { .. } | RetryBudgetExhausted { .. } | UnsupportedCondition(_) | TooManyExclusions { .. } => {
                Self::Infeasible(e.to_string())
            }
            other => Self::Input(other.to_string()),
        }
    }
}

impl From<ctxgeom::fewshot::FewShotError> for PipelineError {
    fn from(e: ctxgeom::fewshot::FewShotError) -> Self {
        match e {
            ctxgeom::fewshot::FewShotError::InsufficientPool { .. } => Self::Infeasible(e.to_string()),
            other => Self::Input(other.to_string()),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// 64-bit FNV-1a digest rendered as 16 hex digits.
pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = 0xcbf2_9ce4_8422_2325_u64;
    for part in parts {
        for &b in *part {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
        h = (h ^ 0xff).wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}
