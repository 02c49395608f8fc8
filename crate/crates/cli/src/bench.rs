//! `bench`: wall-clock cost of selection at two refresh counts and of one
//! training epoch on a subset versus the full set.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use glister_core::data::Dataset;
use glister_core::glister::{greedy_dss, rounds_for_fraction, GlisterConfig, SelectionContext};
use glister_core::models::{sgd_epoch, LossKind, ModelParams, ModelSpec};
use glister_core::numerics::{derive_seed, DenseMatrix, SeededRng};

use crate::CliError;

/// One timing row. The full-training row has `k = n` and `r = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub r: usize,
    pub sel_s: f64,
    pub train_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchParams {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub r_frac: f64,
    pub seed: u64,
    /// Each timing is the minimum over this many repetitions.
    pub reps: usize,
}

impl BenchParams {
    pub fn new(n: usize, d: usize, k: usize, r_frac: f64) -> Self {
        Self { n, d, k, r_frac, seed: 0, reps: 3 }
    }
}

/// Two linearly separated classes of standard normal rows.
pub fn linear_blobs(n: usize, d: usize, seed: u64) -> Result<Dataset, CliError> {
    let mut rng = SeededRng::new(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        labels.push(usize::from(row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() > 0.0));
        data.extend(row);
    }
    Ok(Dataset::new(DenseMatrix::from_vec(n, d, data)?, labels, 2)?)
}

fn min_time<F: FnMut() -> Result<(), CliError>>(reps: usize, mut f: F) -> Result<f64, CliError> {
    let mut best = f64::INFINITY;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

pub fn run_bench(p: &BenchParams) -> Result<Vec<BenchRow>, CliError> {
    if p.k == 0 || p.k > p.n || p.d == 0 {
        return Err(CliError::Config(format!("bench: need 0 < k <= n and d > 0 (n = {}, k = {}, d = {})", p.n, p.k, p.d)));
    }
    if !(p.r_frac > 0.0 && p.r_frac <= 1.0) {
        return Err(CliError::Config("bench: r-frac must lie in (0, 1]".into()));
    }
    let train = linear_blobs(p.n, p.d, p.seed)?;
    let val = linear_blobs((p.n / 10).max(2), p.d, derive_seed(p.seed, 1))?;
    let kind = LossKind::CrossEntropy;
    let params = ModelParams::init(ModelSpec::mlp(), p.d, 2, p.seed);

    let mut rows = Vec::new();
    let mut subset = Vec::new();
    for r in [p.k, rounds_for_fraction(p.k, p.r_frac).min(p.k)] {
        let mut cfg = GlisterConfig::new(p.k, kind, p.seed);
        cfg.rounds = r;
        let sel_s = min_time(p.reps, || {
            let ctx = SelectionContext::from_datasets(&params, &train, &val, kind)?;
            subset = greedy_dss(&ctx, &cfg, &mut SeededRng::new(p.seed))?;
            Ok(())
        })?;
        let train_s = time_epoch(&params, &train, &subset, &cfg, p.reps)?;
        rows.push(BenchRow { n: p.n, d: p.d, k: p.k, r, sel_s, train_s });
    }
    let all: Vec<usize> = (0..p.n).collect();
    let cfg = GlisterConfig::new(p.n, kind, p.seed);
    let train_s = time_epoch(&params, &train, &all, &cfg, p.reps)?;
    rows.push(BenchRow { n: p.n, d: p.d, k: p.n, r: 0, sel_s: 0.0, train_s });
    Ok(rows)
}

fn time_epoch(
    params: &ModelParams,
    train: &Dataset,
    subset: &[usize],
    cfg: &GlisterConfig,
    reps: usize,
) -> Result<f64, CliError> {
    min_time(reps, || {
        let mut rng = SeededRng::new(cfg.seed);
        sgd_epoch(params, train, subset, cfg.lr, cfg.batch_size, cfg.loss, &mut rng)?;
        Ok(())
    })
}

/// Runs the benchmark and writes the rows as a JSON array to `out`, or
/// stdout when `out` is `None`.
pub fn cmd_bench(p: &BenchParams, out: Option<&Path>) -> Result<Vec<BenchRow>, CliError> {
    let rows = run_bench(p)?;
    let text = serde_json::to_string_pretty(&rows).map_err(anyhow::Error::from)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_cover_both_refresh_counts_and_full_epoch() {
        let mut p = BenchParams::new(200, 5, 40, 0.03);
        p.reps = 1;
        let rows = run_bench(&p).unwrap();
        assert_eq!(rows.iter().map(|r| r.r).collect::<Vec<_>>(), vec![40, 2, 0]);
        assert_eq!(rows[2].k, 200);
        let text = serde_json::to_string(&rows).unwrap();
        let back: Vec<BenchRow> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(run_bench(&BenchParams::new(10, 2, 20, 0.03)), Err(CliError::Config(_))));
        assert!(matches!(run_bench(&BenchParams::new(10, 2, 5, 0.0)), Err(CliError::Config(_))));
    }
}
