//! Experiment runner for validation-driven subset selection: JSON-configured
//! online and active-learning runs, built-in verification suites and a
//! selection/training timing harness.

pub mod active_cmd;
pub mod bench;
pub mod config;
pub mod protocols;
pub mod run;
pub mod verify;

use thiserror::Error;

pub use active_cmd::{cmd_active, ActiveSummaryRow};
pub use bench::{cmd_bench, BenchRow};
pub use config::{ActiveExperimentConfig, ExperimentConfig};
pub use run::{cmd_run, SummaryRow};
pub use verify::{cmd_verify, Suite};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl From<glister_core::Error> for CliError {
    fn from(e: glister_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    /// 2 for configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub const THREADS_ENV: &str = "GLISTER_THREADS";

/// Caps the global rayon pool at `GLISTER_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV}: expected a positive integer, got {v:?}")))?;
    // a pool built earlier in the process keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
