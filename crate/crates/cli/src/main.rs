use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use glister_cli::bench::BenchParams;
use glister_cli::{
    cmd_active, cmd_bench, cmd_run, cmd_verify, configure_threads, ActiveExperimentConfig, CliError, ExperimentConfig,
    Suite,
};

#[derive(Parser)]
#[command(name = "glister", version, about = "Validation-driven data subset selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Online subset training for every strategy, budget and seed.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Batch active learning for every acquisition strategy and seed.
    Active {
        #[arg(long)]
        config: PathBuf,
    },
    /// Built-in correctness suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Selection and training wall-clock timings.
    Bench {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long = "r-frac", default_value_t = 0.03)]
        r_frac: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cmd: Command) -> Result<bool, CliError> {
    configure_threads()?;
    match cmd {
        Command::Run { config } => {
            let rows = cmd_run(&ExperimentConfig::load(&config)?)?;
            eprintln!("wrote {} traces", rows.len());
        }
        Command::Active { config } => {
            let rows = cmd_active(&ActiveExperimentConfig::load(&config)?)?;
            eprintln!("wrote {} active traces", rows.len());
        }
        Command::Verify { suite, seed } => {
            let results = cmd_verify(suite.parse::<Suite>()?, seed)?;
            return Ok(results.iter().all(|r| r.passed));
        }
        Command::Bench { n, d, k, r_frac, out } => {
            cmd_bench(&BenchParams::new(n, d, k, r_frac), out.as_deref())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
