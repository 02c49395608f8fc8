//! `active`: batch active learning per acquisition strategy and seed.

use serde::{Deserialize, Serialize};

use glister_core::active::{run_active, stratified_seed_set, Acquisition, ActiveConfig, ActiveOutcome};
use glister_core::numerics::derive_seed;

use crate::config::{glister_config, load_splits, ActiveExperimentConfig, Splits};
use crate::run::{run_seed, write_summary};
use crate::CliError;

pub const ACTIVE_SUMMARY_FILE: &str = "active_summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSummaryRow {
    pub strategy: String,
    pub seed: u64,
    pub run_seed: u64,
    pub rounds: usize,
    pub batch: usize,
    pub final_labeled: usize,
    pub final_test_acc: f64,
    pub final_val_loss: f64,
    pub trace_file: String,
}

pub fn active_trace_file_name(strategy: &str, seed: u64) -> String {
    format!("active_{strategy}_s{seed}.csv")
}

/// Seed labels for `seed`: class-stratified over the pool.
pub fn seed_labels(splits: &Splits, size: usize, seed: u64) -> Result<Vec<usize>, CliError> {
    Ok(stratified_seed_set(&splits.train, size, derive_seed(seed, 5))?)
}

/// One acquisition run on prepared splits.
pub fn run_active_cell(
    cfg: &ActiveExperimentConfig,
    splits: &Splits,
    initial: &[usize],
    strategy: &str,
    seed: u64,
) -> Result<(u64, ActiveOutcome), CliError> {
    let rs = run_seed(seed, strategy, 0);
    let selection = glister_config(&cfg.knobs(strategy)?, cfg.batch, 1, rs, false)?;
    let acq = match strategy {
        "glister" | "d_glister" => Acquisition::Glister,
        "random" => Acquisition::Random,
        "fass" => Acquisition::Fass { filter_mult: cfg.filter_mult },
        other => return Err(CliError::Config(format!("strategies: unknown acquisition strategy {other:?}"))),
    };
    let ac = ActiveConfig { rounds: cfg.rounds, batch: cfg.batch, epochs_per_round: cfg.epochs_per_round, selection };
    let out = run_active(&splits.train, &splits.val, &splits.test, initial, cfg.model.spec(), &ac, acq)?;
    Ok((rs, out))
}

pub fn cmd_active(cfg: &ActiveExperimentConfig) -> Result<Vec<ActiveSummaryRow>, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let splits = load_splits(&cfg.dataset, seed, None, cfg.standardize)?;
        let initial = seed_labels(&splits, cfg.initial_labeled, seed)?;
        for strategy in &cfg.strategies {
            let (rs, out) = run_active_cell(cfg, &splits, &initial, strategy, seed)?;
            let file = active_trace_file_name(strategy, seed);
            out.trace.write_csv(&cfg.output_dir.join(&file))?;
            let last = out.trace.records.last();
            rows.push(ActiveSummaryRow {
                strategy: strategy.clone(),
                seed,
                run_seed: rs,
                rounds: cfg.rounds,
                batch: cfg.batch,
                final_labeled: out.state.labeled().len(),
                final_test_acc: last.map_or(0.0, |r| r.test_acc),
                final_val_loss: last.map_or(0.0, |r| r.val_loss),
                trace_file: file,
            });
        }
    }
    write_summary(&cfg.output_dir.join(ACTIVE_SUMMARY_FILE), &rows)?;
    Ok(rows)
}
