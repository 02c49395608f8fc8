//! Subset-selection baselines: uniform and class-matched random subsets,
//! gradient-space facility location (CRAIG-style, unweighted) and
//! per-class nearest-neighbour coverage.

use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::glister::{
    greedy_dss, train_with_selector, GlisterConfig, GlisterSelector, RunTrace, SelectionContext, Selector,
};
use crate::models::{last_layer_per_sample_grads, LossKind, ModelParams, ModelSpec};
use crate::numerics::SeededRng;
use crate::submodular::{lazy_greedy, FacilityLocation, MatroidQuota};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionStrategy {
    Full,
    Random,
    /// Random with class quotas following the validation proportions.
    RandomPrior,
    Craig,
    KnnsubTrain,
    KnnsubVal,
    Glister,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 7] = [
        SelectionStrategy::Full,
        SelectionStrategy::Random,
        SelectionStrategy::RandomPrior,
        SelectionStrategy::Craig,
        SelectionStrategy::KnnsubTrain,
        SelectionStrategy::KnnsubVal,
        SelectionStrategy::Glister,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::Full => "full",
            SelectionStrategy::Random => "random",
            SelectionStrategy::RandomPrior => "random_prior",
            SelectionStrategy::Craig => "craig",
            SelectionStrategy::KnnsubTrain => "knnsub_train",
            SelectionStrategy::KnnsubVal => "knnsub_val",
            SelectionStrategy::Glister => "glister",
        }
    }

    /// Whether the subset depends on the current parameters.
    pub fn is_adaptive(self) -> bool {
        matches!(self, SelectionStrategy::Craig | SelectionStrategy::Glister)
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectionStrategy::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| invalid(format!("unknown strategy {s:?}")))
    }
}

fn check_budget(k: usize, n: usize) -> Result<()> {
    if k > n {
        return Err(invalid(format!("budget {k} exceeds {n} rows")));
    }
    Ok(())
}

/// Uniform sample of `k` rows, or per-class quotas proportional to the
/// class counts of `match_distribution`.
pub fn random_subset(
    train: &Dataset,
    k: usize,
    rng: &mut SeededRng,
    match_distribution: Option<&Dataset>,
) -> Result<Vec<usize>> {
    check_budget(k, train.len())?;
    let Some(reference) = match_distribution else {
        return Ok(rng.sample_indices(train.len(), k));
    };
    let quota = MatroidQuota::proportional(k, reference, train.labels())?;
    let groups = train.rows_by_class();
    let mut out = Vec::with_capacity(k);
    for (c, &q) in quota.quotas().iter().enumerate() {
        let rows = groups.get(c).map_or(&[][..], |g| g.as_slice());
        if q > rows.len() {
            return Err(Error::Infeasible(format!("class {c} needs {q} rows, has {}", rows.len())));
        }
        out.extend(rng.sample_from(rows, q));
    }
    Ok(out)
}

/// Lazy greedy facility location over per-sample last-layer gradients at
/// `params`, similarity `d_max - |g_i - g_j|^2`.
pub fn craig_subset(train: &Dataset, params: &ModelParams, k: usize, kind: LossKind) -> Result<Vec<usize>> {
    check_budget(k, train.len())?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let table = last_layer_per_sample_grads(params, train.features(), train.labels(), kind)?;
    let f = FacilityLocation::new(&table.grads, None)?;
    lazy_greedy(&f, k, None)
}

/// Per-class coverage of `reference` rows by selected `train` rows, with
/// quotas following the reference class proportions.
pub fn knn_submod_subset(train: &Dataset, reference: &Dataset, k: usize) -> Result<Vec<usize>> {
    check_budget(k, train.len())?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let train_counts = train.class_counts();
    for (c, &cnt) in reference.class_counts().iter().enumerate() {
        if cnt > 0 && train_counts.get(c).copied().unwrap_or(0) == 0 {
            return Err(Error::Infeasible(format!("reference class {c} has no training rows")));
        }
    }
    let quota = MatroidQuota::proportional(k, reference, train.labels())?;
    let f = FacilityLocation::between(
        reference.features(),
        train.features(),
        Some((reference.labels(), train.labels())),
    )?;
    lazy_greedy(&f, k, Some(&quota))
}

/// Adapts any strategy to the online training loop.
pub struct StrategySelector<'a> {
    pub strategy: SelectionStrategy,
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub cfg: &'a GlisterConfig,
    cache: Option<Vec<usize>>,
}

impl<'a> StrategySelector<'a> {
    pub fn new(strategy: SelectionStrategy, train: &'a Dataset, val: &'a Dataset, cfg: &'a GlisterConfig) -> Self {
        Self { strategy, train, val, cfg, cache: None }
    }
}

impl Selector for StrategySelector<'_> {
    fn select(&mut self, params: &ModelParams, rng: &mut SeededRng) -> Result<Vec<usize>> {
        let (train, k) = (self.train, self.cfg.k);
        match self.strategy {
            SelectionStrategy::Full => Ok((0..train.len()).collect()),
            SelectionStrategy::Random => random_subset(train, k, rng, None),
            SelectionStrategy::RandomPrior => random_subset(train, k, rng, Some(self.val)),
            SelectionStrategy::Craig => craig_subset(train, params, k, self.cfg.loss),
            SelectionStrategy::KnnsubTrain | SelectionStrategy::KnnsubVal => {
                if self.cache.is_none() {
                    let reference = if self.strategy == SelectionStrategy::KnnsubTrain { train } else { self.val };
                    self.cache = Some(knn_submod_subset(train, reference, k)?);
                }
                Ok(self.cache.clone().unwrap_or_default())
            }
            SelectionStrategy::Glister => GlisterSelector { train, val: self.val, cfg: self.cfg }.select(params, rng),
        }
    }
}

/// Online training with the given strategy as the subset source.
pub fn run_strategy(
    strategy: SelectionStrategy,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    model: ModelSpec,
    cfg: &GlisterConfig,
    epochs: usize,
) -> Result<(ModelParams, Vec<usize>, RunTrace)> {
    let mut cfg = cfg.clone();
    if strategy == SelectionStrategy::Full {
        cfg.k = train.len();
    }
    let mut sel = StrategySelector::new(strategy, train, val, &cfg);
    train_with_selector(train, val, test, model, &cfg, epochs, &mut sel)
}

/// One GLISTER selection at `params` with true training labels.
pub fn glister_subset(
    train: &Dataset,
    val: &Dataset,
    params: &ModelParams,
    cfg: &GlisterConfig,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    let ctx = SelectionContext::from_datasets(params, train, val, cfg.loss)?;
    greedy_dss(&ctx, cfg, rng)
}
