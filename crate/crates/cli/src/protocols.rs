//! Fixed experimental protocols shared by `verify` and the acceptance
//! tests. Each returns a report whose `passed` applies the protocol's
//! threshold.

use std::fmt;
use std::path::{Path, PathBuf};

use glister_core::baselines::{random_subset, SelectionStrategy};
use glister_core::data::{gen_synthetic, Dataset, SyntheticKind};
use glister_core::glister::{
    exact_gain, monitor_theorem2, proxy_objective, taylor_gain, train_with_selector, GainState, SelectionContext,
    Selector,
};
use glister_core::models::{grad_full, loss_value, LossKind, ModelParams, ModelSpec};
use glister_core::numerics::{derive_seed, finite_diff_grad, ls_slope, norm, DenseMatrix, SeededRng};
use glister_core::submodular::{
    exhaustive_max, lazy_greedy, naive_greedy, randomized_greedy, FacilityLocation, LrSubmodular, RegressionSet,
    SetFunction,
};
use glister_core::Result as CoreResult;
use serde_json::json;

use crate::active_cmd::{run_active_cell, seed_labels};
use crate::config::{glister_config, load_splits, ActiveExperimentConfig, ExperimentConfig, Splits};
use crate::run::{cmd_run, read_summary, run_cell, run_seed, SUMMARY_FILE};
use crate::CliError;

/// Seeds for the multi-seed experiments.
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sep2(n_per_class: usize, seed: u64) -> CoreResult<Dataset> {
    Ok(gen_synthetic(SyntheticKind::Separable2, n_per_class, seed)?.data)
}

// ---------------------------------------------------------------------------
// Gradients

pub const GRAD_REL_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub cases: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.cases >= 50 && self.max_rel_err <= GRAD_REL_TOL
    }
}

impl fmt::Display for GradientReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} cases, max rel err {:.2e} ({}), tol {GRAD_REL_TOL:e}", self.cases, self.max_rel_err, self.worst)
    }
}

fn random_params(spec: ModelSpec, input: usize, output: usize, seed: u64) -> CoreResult<ModelParams> {
    let p = ModelParams::init(spec, input, output, seed);
    let mut rng = SeededRng::new(derive_seed(seed, 1));
    let v: Vec<f64> = p.to_vec().iter().map(|_| 0.5 * rng.normal()).collect();
    p.with_vec(&v)
}

/// Analytic gradients against central differences for every loss, both
/// model kinds and five seeds on a tiny three-class problem.
pub fn gradient_check(seed: u64) -> CoreResult<GradientReport> {
    let (n, d, classes) = (6, 3, 3);
    let mut report = GradientReport { cases: 0, max_rel_err: 0.0, worst: String::new() };
    for kind in LossKind::ALL {
        let c = if kind.is_binary_margin() { 2 } else { classes };
        for spec in [ModelSpec::Logistic, ModelSpec::Mlp { hidden: 4 }] {
            for case in 0..5u64 {
                let s = derive_seed(seed, case * 31 + kind as u64 * 7 + u64::from(spec != ModelSpec::Logistic));
                let mut rng = SeededRng::new(s);
                let x = DenseMatrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect())?;
                let y: Vec<usize> = (0..n).map(|i| i % c).collect();
                let params = random_params(spec, d, kind.output_width(c), s)?;
                let analytic = grad_full(&params, &x, &y, kind)?.to_vec();
                let numeric = finite_diff_grad(
                    |v| params.with_vec(v).and_then(|p| loss_value(&p, &x, &y, kind)).unwrap_or(f64::NAN),
                    &params.to_vec(),
                    FD_STEP,
                )?;
                let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
                let scale = norm(&analytic).max(norm(&numeric)).max(1e-8);
                let rel = norm(&diff) / scale;
                report.cases += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = format!("{}/{:?}/case {case}", kind.name(), spec);
                }
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Submodularity of the proxy objectives

pub const SUBMOD_TOL: f64 = 1e-9;
const PROXY_ALPHA: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct SubmodularityReport {
    pub triples_per_loss: usize,
    /// Largest `f(e|Y) - f(e|X)` over sampled `X <= Y` per margin loss.
    pub margin_violation: Vec<(LossKind, f64)>,
    /// Same quantity over every `(S, e, j)` for the squared proxy.
    pub squared_violation: f64,
    /// Smallest marginal of the squared proxy; negative means non-monotone.
    pub squared_min_marginal: f64,
}

impl SubmodularityReport {
    pub fn passed(&self) -> bool {
        self.margin_violation.iter().all(|(_, v)| *v <= SUBMOD_TOL)
            && self.squared_violation <= SUBMOD_TOL
            && self.squared_min_marginal < 0.0
    }
}

impl fmt::Display for SubmodularityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.margin_violation {
            write!(f, "{}: max DR violation {v:.2e} over {} triples; ", k.name(), self.triples_per_loss)?;
        }
        write!(
            f,
            "squared: max DR violation {:.2e}, min marginal {:.3e}",
            self.squared_violation, self.squared_min_marginal
        )
    }
}

fn proxy_for(kind: LossKind, n_per_class: usize, budget: usize, seed: u64) -> CoreResult<impl SetFunction> {
    let train = sep2(n_per_class, seed)?;
    let val = sep2(10, derive_seed(seed, 1))?;
    let params = random_params(ModelSpec::Logistic, 2, kind.output_width(2), derive_seed(seed, 2))?;
    let ctx = SelectionContext::from_datasets(&params, &train, &val, kind)?;
    proxy_objective(&ctx, PROXY_ALPHA, budget)
}

pub fn submodularity_check(seed: u64) -> CoreResult<SubmodularityReport> {
    const TRIPLES: usize = 200;
    const BUDGET: usize = 20;
    let mut margin_violation = Vec::new();
    for kind in [LossKind::Logistic, LossKind::Hinge, LossKind::Perceptron] {
        let f = proxy_for(kind, 30, BUDGET, derive_seed(seed, kind as u64))?;
        let n = f.ground_size();
        let mut rng = SeededRng::new(derive_seed(seed, 100 + kind as u64));
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..TRIPLES {
            let ny = 1 + rng.below(BUDGET - 1);
            let y = rng.sample_indices(n, ny);
            let x: Vec<usize> = y.iter().copied().filter(|_| rng.uniform() < 0.5).collect();
            let rest: Vec<usize> = (0..n).filter(|i| !y.contains(i)).collect();
            let e = rest[rng.below(rest.len())];
            worst = worst.max(f.marginal(e, &y) - f.marginal(e, &x));
        }
        margin_violation.push((kind, worst.max(0.0)));
    }

    // squared proxy: every subset of a 10-element ground set
    let f = proxy_for(LossKind::Squared, 5, 4, derive_seed(seed, 200))?;
    let n = f.ground_size();
    let mut squared_violation = 0.0f64;
    let mut squared_min_marginal = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let s: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        for e in (0..n).filter(|&e| mask >> e & 1 == 0) {
            let ge = f.marginal(e, &s);
            squared_min_marginal = squared_min_marginal.min(ge);
            for j in (0..n).filter(|&j| j != e && mask >> j & 1 == 0) {
                let mut sj = s.clone();
                sj.push(j);
                squared_violation = squared_violation.max(f.marginal(e, &sj) - ge);
            }
        }
    }
    Ok(SubmodularityReport { triples_per_loss: TRIPLES, margin_violation, squared_violation, squared_min_marginal })
}

// ---------------------------------------------------------------------------
// Greedy approximation ratios

pub const GREEDY_BOUND: f64 = 1.0 - 1.0 / std::f64::consts::E;
pub const RANDOMIZED_BOUND: f64 = 1.0 / std::f64::consts::E;

#[derive(Debug, Clone)]
pub struct GreedyRatioReport {
    pub instances: usize,
    pub fl_min_ratio: f64,
    pub proxy_min_ratio: f64,
    pub lazy_matches_naive: bool,
    pub randomized_mean_ratio: f64,
    /// Optimum of the randomized instance; must exceed `f({}) = 0`.
    pub randomized_opt: f64,
}

impl GreedyRatioReport {
    pub fn passed(&self) -> bool {
        self.fl_min_ratio >= GREEDY_BOUND
            && self.proxy_min_ratio >= GREEDY_BOUND
            && self.lazy_matches_naive
            && self.randomized_opt > 0.0
            && self.randomized_mean_ratio >= RANDOMIZED_BOUND
    }
}

impl fmt::Display for GreedyRatioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} instances: FL min ratio {:.4}, proxy min ratio {:.4} (bound {GREEDY_BOUND:.4}), lazy == naive: {}, \
             randomized mean ratio {:.4} (bound {RANDOMIZED_BOUND:.4}, OPT {:.3})",
            self.instances,
            self.fl_min_ratio,
            self.proxy_min_ratio,
            self.lazy_matches_naive,
            self.randomized_mean_ratio,
            self.randomized_opt
        )
    }
}

/// `(f(S) - f({})) / (OPT - f({}))`, 1 when the optimum adds nothing.
fn normalized_ratio(f: &dyn SetFunction, set: &[usize], opt: f64) -> f64 {
    let base = f.value(&[]);
    if opt - base <= 1e-12 {
        1.0
    } else {
        (f.value(set) - base) / (opt - base)
    }
}

/// First seeded LR-submodular instance (10 training rows, 8 clusters)
/// whose optimum over 4-sets is positive. Training targets are scaled
/// down so the modular part can outweigh the pair penalty.
fn lr_instance(seed: u64) -> CoreResult<(LrSubmodular, f64)> {
    let mut last = None;
    for t in 0..64u64 {
        let mut rng = SeededRng::new(derive_seed(seed, 5000 + t));
        let mut reg = |rows: usize, scale: f64| -> CoreResult<RegressionSet> {
            let x = DenseMatrix::from_vec(rows, 3, (0..rows * 3).map(|_| rng.normal()).collect())?;
            let y = x.row_iter().map(|r| scale * (r[0] - 0.5 * r[1] + 0.25 * r[2] + 0.1 * rng.normal())).collect();
            RegressionSet::new(x, y)
        };
        let (train, val) = (reg(10, 0.1)?, reg(20, 1.0)?);
        let f = LrSubmodular::new(&train, &val, 8, derive_seed(seed, t))?;
        let (_, opt) = exhaustive_max(&f, 4, None)?;
        if opt > f.value(&[]) {
            return Ok((f, opt));
        }
        last = Some((f, opt));
    }
    Ok(last.expect("at least one instance"))
}

pub fn greedy_ratio_check(seed: u64) -> CoreResult<GreedyRatioReport> {
    const INSTANCES: usize = 25;
    const N: usize = 12;
    const K: usize = 4;
    let mut report = GreedyRatioReport {
        instances: 2 * INSTANCES,
        fl_min_ratio: f64::INFINITY,
        proxy_min_ratio: f64::INFINITY,
        lazy_matches_naive: true,
        randomized_mean_ratio: 0.0,
        randomized_opt: 0.0,
    };
    for i in 0..INSTANCES as u64 {
        let mut rng = SeededRng::new(derive_seed(seed, i));
        let x = DenseMatrix::from_vec(N, 3, (0..N * 3).map(|_| rng.normal()).collect())?;
        let fl = FacilityLocation::new(&x, None)?;
        let proxy = proxy_for(LossKind::Logistic, N / 2, K, derive_seed(seed, 1000 + i))?;
        for (f, slot) in [(&fl as &dyn SetFunction, &mut report.fl_min_ratio), (&proxy, &mut report.proxy_min_ratio)] {
            let naive = naive_greedy(f, K, None)?;
            report.lazy_matches_naive &= lazy_greedy(f, K, None)? == naive;
            let (_, opt) = exhaustive_max(f, K, None)?;
            *slot = slot.min(normalized_ratio(f, &naive, opt));
        }
    }

    let (f, opt) = lr_instance(seed)?;
    report.randomized_opt = opt;
    let ratios: Vec<f64> = (0..50u64)
        .map(|s| {
            let set = randomized_greedy(&f, K, &mut SeededRng::new(derive_seed(seed, 6000 + s)), None)?;
            Ok(normalized_ratio(&f, &set, opt))
        })
        .collect::<CoreResult<_>>()?;
    report.randomized_mean_ratio = mean(&ratios);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Taylor fidelity

pub const TAYLOR_AGREEMENT: f64 = 0.8;
pub const TAYLOR_SLOPE: f64 = 1.7;
pub const TAYLOR_ETAS: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Debug, Clone)]
pub struct TaylorReport {
    pub trials: usize,
    pub agreements: usize,
    /// Mean `|exact - taylor|` per step in [`TAYLOR_ETAS`].
    pub mean_err: Vec<f64>,
    pub slope: f64,
}

impl TaylorReport {
    pub fn agreement(&self) -> f64 {
        self.agreements as f64 / self.trials.max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.agreement() >= TAYLOR_AGREEMENT && self.slope >= TAYLOR_SLOPE
    }
}

impl fmt::Display for TaylorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "top-1 agreement {}/{} ({:.2}, need {TAYLOR_AGREEMENT}), error slope {:.3} (need {TAYLOR_SLOPE}), mean errors {:?}",
            self.agreements,
            self.trials,
            self.agreement(),
            self.slope,
            self.mean_err.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
        )
    }
}

fn argmax(scores: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

fn state_at<'c>(ctx: &'c SelectionContext, partial: &[usize], eta: f64) -> CoreResult<GainState<'c>> {
    let mut st = GainState::new(ctx, eta)?;
    for &e in partial {
        st.fold(e);
    }
    if !partial.is_empty() {
        st.refresh()?;
    }
    Ok(st)
}

/// Linearized versus exact gains for the next element of a random partial
/// selection. Agreement is measured at `eta = 0.01`; the error slope is
/// fitted in log-log space over [`TAYLOR_ETAS`].
pub fn taylor_fidelity(seed: u64) -> CoreResult<TaylorReport> {
    const TRIALS: usize = 100;
    let mut agreements = 0;
    let mut errs = vec![Vec::new(); TAYLOR_ETAS.len()];
    for t in 0..TRIALS as u64 {
        let s = derive_seed(seed, t);
        let train = sep2(100, s)?;
        let val = sep2(20, derive_seed(s, 1))?;
        let params = random_params(ModelSpec::Logistic, 2, 2, derive_seed(s, 2))?;
        let ctx = SelectionContext::from_datasets(&params, &train, &val, LossKind::CrossEntropy)?;
        let mut rng = SeededRng::new(derive_seed(s, 3));
        let partial = rng.sample_indices(ctx.len(), (t % 4) as usize);
        let rest: Vec<usize> = (0..ctx.len()).filter(|i| !partial.contains(i)).collect();

        let st = state_at(&ctx, &partial, 1e-2)?;
        let top_taylor = argmax(rest.iter().map(|&e| (e, taylor_gain(&st, e))));
        let exact: Vec<(usize, f64)> =
            rest.iter().map(|&e| Ok((e, exact_gain(&ctx, &partial, e, 1e-2)?))).collect::<CoreResult<_>>()?;
        let top_exact = argmax(exact.into_iter());
        agreements += usize::from(top_taylor == top_exact);

        let e = top_taylor.unwrap_or(0);
        for (slot, &eta) in errs.iter_mut().zip(&TAYLOR_ETAS) {
            let st = state_at(&ctx, &partial, eta)?;
            slot.push((exact_gain(&ctx, &partial, e, eta)? - taylor_gain(&st, e)).abs());
        }
    }
    let mean_err: Vec<f64> = errs.iter().map(|v| mean(v)).collect();
    let xs: Vec<f64> = TAYLOR_ETAS.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = mean_err.iter().map(|e| e.max(1e-300).ln()).collect();
    Ok(TaylorReport { trials: TRIALS, agreements, mean_err, slope: ls_slope(&xs, &ys) })
}

// ---------------------------------------------------------------------------
// Online-training experiments

fn base_config(dataset: serde_json::Value, extra: serde_json::Value) -> Result<ExperimentConfig, CliError> {
    let mut v = json!({
        "schema_version": 1,
        "dataset": dataset,
        "strategies": ["glister"],
        "budgets": [0.3],
        "output_dir": "unused",
    });
    if let (Some(obj), Some(more)) = (v.as_object_mut(), extra.as_object()) {
        for (k, val) in more {
            obj.insert(k.clone(), val.clone());
        }
    }
    ExperimentConfig::from_json(&v.to_string())
}

fn run_acc(cfg: &ExperimentConfig, splits: &Splits, strategy: SelectionStrategy, seed: u64) -> Result<(f64, Vec<usize>), CliError> {
    let cell = run_cell(
        splits,
        strategy,
        cfg.budgets[0],
        0,
        seed,
        &cfg.knobs(),
        cfg.model.spec(),
        cfg.select_every,
        cfg.epochs,
        cfg.record_timing,
    )?;
    Ok((cell.trace.last().map_or(0.0, |r| r.test_acc), cell.subset))
}

pub const NOISE_RATE: f64 = 0.3;
pub const NOISE_MARGIN: f64 = 0.05;
pub const NOISE_MAX_SELECTED: f64 = 0.15;

#[derive(Debug, Clone)]
pub struct NoiseReport {
    pub glister_acc: Vec<f64>,
    pub random_acc: Vec<f64>,
    /// Fraction of label-flipped rows in the final selected subset.
    pub selected_noise: Vec<f64>,
}

impl NoiseReport {
    pub fn passed(&self) -> bool {
        mean(&self.glister_acc) >= mean(&self.random_acc) + NOISE_MARGIN
            && mean(&self.selected_noise) <= NOISE_MAX_SELECTED
    }
}

impl fmt::Display for NoiseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "test acc glister {:.4} vs random {:.4} (need +{NOISE_MARGIN}), noisy fraction of subset {:.3} \
             (need <= {NOISE_MAX_SELECTED}, injected {NOISE_RATE})",
            mean(&self.glister_acc),
            mean(&self.random_acc),
            mean(&self.selected_noise)
        )
    }
}

/// Separable two-class blobs with 30% flipped training labels and a clean
/// validation set; 30% budget.
pub fn noise_experiment(seeds: &[u64]) -> Result<NoiseReport, CliError> {
    let cfg = base_config(
        json!({"source": "synthetic", "kind": "separable-2", "n_per_class": 500, "val_per_class": 50, "test_per_class": 250}),
        json!({"corruption": {"noise_rate": NOISE_RATE}}),
    )?;
    let mut r = NoiseReport { glister_acc: Vec::new(), random_acc: Vec::new(), selected_noise: Vec::new() };
    for &seed in seeds {
        let splits = load_splits(&cfg.dataset, seed, cfg.corruption.as_ref(), cfg.standardize)?;
        let (acc, subset) = run_acc(&cfg, &splits, SelectionStrategy::Glister, seed)?;
        let flags = splits.train.flags();
        let noisy = subset.iter().filter(|&&i| flags[i].noise_flipped).count();
        r.glister_acc.push(acc);
        r.selected_noise.push(noisy as f64 / subset.len().max(1) as f64);
        r.random_acc.push(run_acc(&cfg, &splits, SelectionStrategy::Random, seed)?.0);
    }
    Ok(r)
}

pub const IMBALANCE_MARGIN: f64 = 0.03;
pub const IMBALANCE_ENRICHMENT: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct ImbalanceReport {
    pub glister_acc: Vec<f64>,
    pub proportional_acc: Vec<f64>,
    /// Fraction of rare-class rows in the selected subset.
    pub subset_rare: Vec<f64>,
    /// Fraction of rare-class rows in the training pool.
    pub pool_rare: Vec<f64>,
}

impl ImbalanceReport {
    pub fn passed(&self) -> bool {
        mean(&self.subset_rare) >= IMBALANCE_ENRICHMENT * mean(&self.pool_rare)
            && mean(&self.glister_acc) >= mean(&self.proportional_acc) + IMBALANCE_MARGIN
    }
}

impl fmt::Display for ImbalanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rare fraction subset {:.3} vs pool {:.3} (need {IMBALANCE_ENRICHMENT}x), test acc glister {:.4} vs \
             proportional random {:.4} (need +{IMBALANCE_MARGIN})",
            mean(&self.subset_rare),
            mean(&self.pool_rare),
            mean(&self.glister_acc),
            mean(&self.proportional_acc)
        )
    }
}

/// Uniform sampling within classes, class counts proportional to the
/// training pool.
struct ProportionalRandom<'a> {
    train: &'a Dataset,
    k: usize,
}

impl Selector for ProportionalRandom<'_> {
    fn select(&mut self, _params: &ModelParams, rng: &mut SeededRng) -> CoreResult<Vec<usize>> {
        random_subset(self.train, self.k, rng, Some(self.train))
    }
}

/// Four overlapping classes, 30% of the classes reduced to 10% of their
/// rows in training only; balanced validation; 30% budget.
pub fn imbalance_experiment(seeds: &[u64]) -> Result<ImbalanceReport, CliError> {
    let cfg = base_config(
        json!({"source": "synthetic", "kind": "overlapping-4", "n_per_class": 300, "val_per_class": 30, "test_per_class": 150}),
        json!({"corruption": {"imbalance": {"affected_class_frac": 0.3, "keep_frac": 0.1}}}),
    )?;
    let mut r = ImbalanceReport {
        glister_acc: Vec::new(),
        proportional_acc: Vec::new(),
        subset_rare: Vec::new(),
        pool_rare: Vec::new(),
    };
    for &seed in seeds {
        let splits = load_splits(&cfg.dataset, seed, cfg.corruption.as_ref(), cfg.standardize)?;
        let counts = splits.train.class_counts();
        let max = counts.iter().copied().max().unwrap_or(0);
        let rare: Vec<bool> = counts.iter().map(|&c| 2 * c < max).collect();
        let labels = splits.train.labels();
        let rare_frac = |idx: &mut dyn Iterator<Item = usize>| {
            let (mut hit, mut total) = (0usize, 0usize);
            for i in idx {
                total += 1;
                hit += usize::from(rare[labels[i]]);
            }
            hit as f64 / total.max(1) as f64
        };

        let (acc, subset) = run_acc(&cfg, &splits, SelectionStrategy::Glister, seed)?;
        r.glister_acc.push(acc);
        r.subset_rare.push(rare_frac(&mut subset.iter().copied()));
        r.pool_rare.push(rare_frac(&mut (0..splits.train.len())));

        let k = crate::run::budget_size(cfg.budgets[0], splits.train.len());
        let gc = glister_config(&cfg.knobs(), k, cfg.select_every, run_seed(seed, "random_proportional", 0), false)?;
        let mut sel = ProportionalRandom { train: &splits.train, k };
        let (_, _, trace) =
            train_with_selector(&splits.train, &splits.val, &splits.test, cfg.model.spec(), &gc, cfg.epochs, &mut sel)?;
        r.proportional_acc.push(trace.last().map_or(0.0, |x| x.test_acc));
    }
    Ok(r)
}

pub const ACTIVE_MARGIN: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct ActiveReport {
    pub glister_acc: Vec<f64>,
    pub random_acc: Vec<f64>,
}

impl ActiveReport {
    pub fn passed(&self) -> bool {
        mean(&self.glister_acc) >= mean(&self.random_acc) + ACTIVE_MARGIN
    }
}

impl fmt::Display for ActiveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "final test acc glister {:.4} vs random {:.4} (need +{ACTIVE_MARGIN})",
            mean(&self.glister_acc),
            mean(&self.random_acc)
        )
    }
}

/// Batch active learning on separable two-class blobs: 20 seed labels,
/// 10 rounds of 50 acquisitions.
pub fn active_experiment(seeds: &[u64]) -> Result<ActiveReport, CliError> {
    let cfg = ActiveExperimentConfig::from_json(
        &json!({
            "schema_version": 1,
            "dataset": {"source": "synthetic", "kind": "separable-2", "n_per_class": 500, "val_per_class": 50, "test_per_class": 250},
            "strategies": ["glister", "random"],
            "rounds": 10,
            "batch": 50,
            "output_dir": "unused",
        })
        .to_string(),
    )?;
    let mut r = ActiveReport { glister_acc: Vec::new(), random_acc: Vec::new() };
    for &seed in seeds {
        let splits = load_splits(&cfg.dataset, seed, None, cfg.standardize)?;
        let initial = seed_labels(&splits, cfg.initial_labeled, seed)?;
        for (name, out) in [("glister", &mut r.glister_acc), ("random", &mut r.random_acc)] {
            let (_, outcome) = run_active_cell(&cfg, &splits, &initial, name, seed)?;
            out.push(outcome.trace.records.last().map_or(0.0, |x| x.test_acc));
        }
    }
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct DescentReport {
    pub seeds: usize,
    pub monitored: usize,
    /// Selection epochs where both descent conditions held.
    pub conditions_held: usize,
    pub violations: usize,
    pub val_rises: usize,
    pub lipschitz_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
}

impl DescentReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl fmt::Display for DescentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violations over {} monitored epochs ({} seeds); conditions held at {}, validation loss rose at {}; \
             L_hat {:?}, sigma_hat {:?}",
            self.violations,
            self.monitored,
            self.seeds,
            self.conditions_held,
            self.val_rises,
            self.lipschitz_hat.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>(),
            self.sigma_hat.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>()
        )
    }
}

/// Small-step online training with selection every epoch; every epoch is
/// checked for a validation-loss rise where both descent conditions held.
pub fn descent_experiment(seeds: &[u64]) -> Result<DescentReport, CliError> {
    let cfg = base_config(
        json!({"source": "synthetic", "kind": "separable-2", "n_per_class": 500, "val_per_class": 50, "test_per_class": 250}),
        json!({"lr": 0.005, "select_every": 1}),
    )?;
    let mut r = DescentReport {
        seeds: seeds.len(),
        monitored: 0,
        conditions_held: 0,
        violations: 0,
        val_rises: 0,
        lipschitz_hat: Vec::new(),
        sigma_hat: Vec::new(),
    };
    for &seed in seeds {
        let splits = load_splits(&cfg.dataset, seed, None, cfg.standardize)?;
        let cell = run_cell(
            &splits,
            SelectionStrategy::Glister,
            cfg.budgets[0],
            0,
            seed,
            &cfg.knobs(),
            cfg.model.spec(),
            cfg.select_every,
            cfg.epochs,
            false,
        )?;
        let rep = monitor_theorem2(&cell.trace);
        r.monitored += rep.rows.len();
        r.conditions_held += rep.rows.iter().filter(|x| x.dot_ok && x.lr_ok).count();
        r.val_rises += rep.rows.iter().filter(|x| x.val_after > x.val_before).count();
        r.violations += rep.violations;
        r.lipschitz_hat.push(rep.lipschitz_hat.unwrap_or(f64::NAN));
        r.sigma_hat.push(rep.sigma_hat);
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// Determinism

#[derive(Debug, Clone)]
pub struct DeterminismReport {
    pub files_compared: usize,
    pub mismatched: Vec<String>,
}

impl DeterminismReport {
    pub fn passed(&self) -> bool {
        self.files_compared > 0 && self.mismatched.is_empty()
    }
}

impl fmt::Display for DeterminismReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} trace files compared byte-for-byte, mismatched: {:?}", self.files_compared, self.mismatched)
    }
}

/// A small multi-strategy, multi-seed configuration with timing disabled.
pub fn determinism_config(output_dir: &Path) -> Result<ExperimentConfig, CliError> {
    let mut cfg = base_config(
        json!({"source": "synthetic", "kind": "overlapping-4", "n_per_class": 60}),
        json!({
            "strategies": ["glister", "random", "craig"],
            "budgets": [0.1, 0.3],
            "seeds": [0, 1],
            "epochs": 30,
            "select_every": 5,
            "model": {"kind": "mlp", "hidden": 16},
            "record_timing": false,
        }),
    )?;
    cfg.output_dir = output_dir.to_path_buf();
    Ok(cfg)
}

/// Runs [`determinism_config`] into `a` and `b` and compares every trace
/// file and the subset digests of both summaries.
pub fn determinism_check(a: &Path, b: &Path) -> Result<DeterminismReport, CliError> {
    let ra = cmd_run(&determinism_config(a)?)?;
    let rb = cmd_run(&determinism_config(b)?)?;
    let mut report = DeterminismReport { files_compared: 0, mismatched: Vec::new() };
    if ra.len() != rb.len() {
        report.mismatched.push("summary length".into());
    }
    for (x, y) in ra.iter().zip(&rb) {
        let (fa, fb) = (std::fs::read(a.join(&x.trace_file))?, std::fs::read(b.join(&y.trace_file))?);
        report.files_compared += 1;
        if fa != fb || x.subset_digest != y.subset_digest {
            report.mismatched.push(x.trace_file.clone());
        }
    }
    let (sa, sb) = (read_summary(&a.join(SUMMARY_FILE))?, read_summary(&b.join(SUMMARY_FILE))?);
    if sa != sb {
        report.mismatched.push(SUMMARY_FILE.into());
    }
    Ok(report)
}

/// A fresh directory under the system temp dir.
pub fn scratch_dir(tag: &str) -> Result<PathBuf, CliError> {
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    let dir = std::env::temp_dir().join(format!("glister-{tag}-{}-{nanos}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
