//! Experiment harness: configuration, file formats and the subcommands behind
//! the `supertomo` binary.

pub mod commands;
pub mod config;
pub mod io;

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] supertomo_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),
}

impl CliError {
    pub(crate) fn io(context: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            context: context.to_string(),
            source,
        }
    }

    pub(crate) fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            context: path.display().to_string(),
            source,
        }
    }

    /// 2 for anything the user can fix in the configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use supertomo_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::InvalidParameter { .. } | E::DimensionMismatch { .. }) => 2,
            _ => 1,
        }
    }
}

pub const THREADS_VAR: &str = "SUPTOMO_THREADS";

/// Sizes the global worker pool from `SUPTOMO_THREADS` when it is set.
pub fn configure_threads(value: Option<&str>) -> Result<(), CliError> {
    let Some(v) = value else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("{THREADS_VAR}: {e}")))
}
