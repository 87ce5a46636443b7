//! File formats, parallel execution and the `mglrt` command line front
//! end for [`mglrt_core`].

pub mod commands;
pub mod config;
pub mod output;
pub mod parallel;
pub mod presets;
pub mod selftest;

/// Failures surfaced by the front end.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] mglrt_core::Error),
}

impl CliError {
    /// 2 for configuration and parameter problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(mglrt_core::Error::Parameter(_)) => 2,
            _ => 1,
        }
    }
}
