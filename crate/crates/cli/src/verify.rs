//! `verify`: built-in correctness suites with a pass/fail table.

use std::fmt;
use std::str::FromStr;

use crate::protocols::{
    determinism_check, gradient_check, greedy_ratio_check, noise_experiment, scratch_dir, submodularity_check,
    taylor_fidelity,
};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Submodularity,
    GreedyRatio,
    TaylorFidelity,
    Robustness,
    Determinism,
    All,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Gradients,
        Suite::Submodularity,
        Suite::GreedyRatio,
        Suite::TaylorFidelity,
        Suite::Robustness,
        Suite::Determinism,
        Suite::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::Submodularity => "submodularity",
            Suite::GreedyRatio => "greedy-ratio",
            Suite::TaylorFidelity => "taylor-fidelity",
            Suite::Robustness => "robustness",
            Suite::Determinism => "determinism",
            Suite::All => "all",
        }
    }

    fn members(self) -> Vec<Suite> {
        match self {
            Suite::All => Suite::ALL[..6].to_vec(),
            s => vec![s],
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            CliError::Config(format!("suite: unknown suite {s:?}, expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
}

fn run_one(suite: Suite, seed: u64) -> Result<SuiteResult, CliError> {
    let (passed, detail) = match suite {
        Suite::Gradients => {
            let r = gradient_check(seed)?;
            (r.passed(), r.to_string())
        }
        Suite::Submodularity => {
            let r = submodularity_check(seed)?;
            (r.passed(), r.to_string())
        }
        Suite::GreedyRatio => {
            let r = greedy_ratio_check(seed)?;
            (r.passed(), r.to_string())
        }
        Suite::TaylorFidelity => {
            let r = taylor_fidelity(seed)?;
            (r.passed(), r.to_string())
        }
        Suite::Robustness => {
            let r = noise_experiment(&[seed])?;
            (r.passed(), r.to_string())
        }
        Suite::Determinism => {
            let (a, b) = (scratch_dir("verify-a")?, scratch_dir("verify-b")?);
            let r = determinism_check(&a, &b);
            let _ = std::fs::remove_dir_all(&a);
            let _ = std::fs::remove_dir_all(&b);
            let r = r?;
            (r.passed(), r.to_string())
        }
        Suite::All => unreachable!("expanded by members"),
    };
    Ok(SuiteResult { suite, passed, detail })
}

/// Runs the suite(s) and prints one row per suite. Returns the results;
/// the caller maps any failure to a non-zero exit.
pub fn cmd_verify(suite: Suite, seed: u64) -> Result<Vec<SuiteResult>, CliError> {
    let mut out = Vec::new();
    println!("{:<16} {:<6} detail", "suite", "result");
    for s in suite.members() {
        let r = run_one(s, seed)?;
        println!("{:<16} {:<6} {}", r.suite.name(), if r.passed { "PASS" } else { "FAIL" }, r.detail);
        out.push(r);
    }
    Ok(out)
}
