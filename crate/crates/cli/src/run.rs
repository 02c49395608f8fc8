//! `run`: strategies x budgets x seeds of online subset training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use glister_core::baselines::{run_strategy, SelectionStrategy};
use glister_core::glister::RunTrace;
use glister_core::models::ModelSpec;

use crate::config::{glister_config, load_splits, ExperimentConfig, SelectionKnobs, Splits};
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.json";

/// One summary entry per trace file. Numbers are copied from the final
/// trace row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub budget: f64,
    pub seed: u64,
    pub run_seed: u64,
    pub k: usize,
    pub epochs: usize,
    pub final_test_acc: f64,
    pub final_val_loss: f64,
    pub total_wall_s: f64,
    pub selection_s: f64,
    pub subset_digest: String,
    pub trace_file: String,
}

/// FNV-1a over the strategy name.
pub fn strategy_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// `seed ^ strategy_hash ^ budget_index`.
pub fn run_seed(seed: u64, strategy: &str, budget_index: usize) -> u64 {
    seed ^ strategy_hash(strategy) ^ budget_index as u64
}

pub fn trace_file_name(strategy: &str, budget: f64, seed: u64) -> String {
    format!("{strategy}_b{budget}_s{seed}.csv")
}

/// `round(frac * n)`, at least 1.
pub fn budget_size(frac: f64, n: usize) -> usize {
    ((frac * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Result of one (strategy, budget, seed) cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub k: usize,
    pub run_seed: u64,
    pub subset: Vec<usize>,
    pub trace: RunTrace,
    pub params: glister_core::ModelParams,
}

#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    splits: &Splits,
    strategy: SelectionStrategy,
    budget: f64,
    budget_index: usize,
    seed: u64,
    knobs: &SelectionKnobs,
    model: ModelSpec,
    select_every: usize,
    epochs: usize,
    record_timing: bool,
) -> Result<Cell, CliError> {
    let n = splits.train.len();
    let k = if strategy == SelectionStrategy::Full { n } else { budget_size(budget, n) };
    let rs = run_seed(seed, strategy.name(), budget_index);
    let cfg = glister_config(knobs, k, select_every, rs, record_timing)?;
    let (params, subset, trace) = run_strategy(strategy, &splits.train, &splits.val, &splits.test, model, &cfg, epochs)?;
    Ok(Cell { k, run_seed: rs, subset, trace, params })
}

fn summarize(strategy: &str, budget: f64, seed: u64, cell: &Cell, file: String) -> SummaryRow {
    let last = cell.trace.last();
    SummaryRow {
        strategy: strategy.to_string(),
        budget,
        seed,
        run_seed: cell.run_seed,
        k: cell.k,
        epochs: cell.trace.records.len(),
        final_test_acc: last.map_or(0.0, |r| r.test_acc),
        final_val_loss: last.map_or(0.0, |r| r.val_loss),
        total_wall_s: last.map_or(0.0, |r| r.wall_s),
        selection_s: cell.trace.records.iter().map(|r| r.sel_s).sum(),
        subset_digest: last.map_or_else(String::new, |r| r.subset_digest.clone()),
        trace_file: file,
    }
}

/// Runs every cell, writes one trace per cell and `summary.json` into the
/// output directory.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>, CliError> {
    cfg.validate()?;
    let strategies = cfg.strategies()?;
    let knobs = cfg.knobs();
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let splits = load_splits(&cfg.dataset, seed, cfg.corruption.as_ref(), cfg.standardize)?;
        for &strategy in &strategies {
            let budgets: Vec<f64> = if strategy == SelectionStrategy::Full { vec![1.0] } else { cfg.budgets.clone() };
            for (bi, &budget) in budgets.iter().enumerate() {
                let cell = run_cell(
                    &splits,
                    strategy,
                    budget,
                    bi,
                    seed,
                    &knobs,
                    cfg.model.spec(),
                    cfg.select_every,
                    cfg.epochs,
                    cfg.record_timing,
                )?;
                let file = trace_file_name(strategy.name(), budget, seed);
                cell.trace.write_csv(&cfg.output_dir.join(&file))?;
                rows.push(summarize(strategy.name(), budget, seed, &cell, file));
            }
        }
    }
    write_summary(&cfg.output_dir.join(SUMMARY_FILE), &rows)?;
    Ok(rows)
}

pub fn write_summary<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(rows).map_err(anyhow::Error::from)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text).map_err(anyhow::Error::from)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_strategy_and_budget() {
        assert_ne!(run_seed(0, "glister", 0), run_seed(0, "random", 0));
        assert_eq!(run_seed(5, "glister", 1) ^ run_seed(5, "glister", 0), 1);
        assert_eq!(strategy_hash(""), 0xcbf2_9ce4_8422_2325);
        // reference FNV-1a 64 value for "a"
        assert_eq!(strategy_hash("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(budget_size(0.3, 1000), 300);
        assert_eq!(budget_size(0.001, 10), 1);
        assert_eq!(budget_size(1.0, 7), 7);
        assert_eq!(trace_file_name("glister", 0.1, 3), "glister_b0.1_s3.csv");
    }
}
