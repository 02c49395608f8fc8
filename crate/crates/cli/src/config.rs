//! JSON experiment configuration. Unknown keys are rejected and every
//! validation failure names the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use glister_core::baselines::SelectionStrategy;
use glister_core::data::{
    gen_synthetic, inject_class_imbalance, inject_label_noise, parse_libsvm, split, Dataset, SplitSpec, Standardizer,
    SyntheticKind,
};
use glister_core::glister::{rounds_for_fraction, GlisterConfig, GreedyKind, Regularizer};
use glister_core::models::{LossKind, ModelSpec, DEFAULT_HIDDEN, DEFAULT_LR};
use glister_core::numerics::derive_seed;
use glister_core::submodular::DEFAULT_STOCHASTIC_EPS;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_R_FRAC: f64 = 0.03;

fn default_loss() -> String {
    LossKind::CrossEntropy.name().to_string()
}
fn default_select_every() -> usize {
    glister_core::glister::DEFAULT_SELECT_EVERY
}
fn default_r_frac() -> f64 {
    DEFAULT_R_FRAC
}
fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_batch() -> usize {
    glister_core::glister::DEFAULT_BATCH
}
fn default_regularizer() -> String {
    "none".into()
}
fn default_greedy() -> String {
    "naive".into()
}
fn default_epsilon() -> f64 {
    DEFAULT_STOCHASTIC_EPS
}
fn default_epochs() -> usize {
    200
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_true() -> bool {
    true
}
fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Gaussian blobs. Validation and test sets are drawn from the same
    /// generator with derived seeds, or from the shifted companion set for
    /// the shifted kinds.
    Synthetic {
        kind: String,
        n_per_class: usize,
        #[serde(default)]
        val_per_class: Option<usize>,
        #[serde(default)]
        test_per_class: Option<usize>,
    },
    /// LIBSVM files. Missing validation or test files are carved out of
    /// `train` with `split` (stratified).
    Libsvm {
        train: PathBuf,
        #[serde(default)]
        val: Option<PathBuf>,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default)]
        split: Option<[f64; 3]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Logistic,
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: usize,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Mlp { hidden: DEFAULT_HIDDEN }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> ModelSpec {
        match *self {
            ModelConfig::Logistic => ModelSpec::Logistic,
            ModelConfig::Mlp { hidden } => ModelSpec::Mlp { hidden },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Imbalance {
    pub affected_class_frac: f64,
    pub keep_frac: f64,
}

/// Applied to the training split only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    #[serde(default)]
    pub noise_rate: Option<f64>,
    #[serde(default)]
    pub imbalance: Option<Imbalance>,
}

/// Knobs shared by the online and active runners.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionKnobs {
    pub loss: String,
    /// Absolute refresh count; overrides `r_frac`.
    pub rounds: Option<usize>,
    pub r_frac: f64,
    /// Lookahead step; defaults to `lr`.
    pub eta: Option<f64>,
    pub lr: f64,
    pub batch_size: usize,
    pub regularizer: String,
    pub lambda: Option<f64>,
    pub greedy: String,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    pub strategies: Vec<String>,
    #[serde(default)]
    pub budgets: Vec<f64>,
    #[serde(default = "default_select_every")]
    pub select_every: usize,
    #[serde(default = "default_loss")]
    pub loss: String,
    /// Absolute refresh count; overrides `r_frac`.
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default = "default_r_frac")]
    pub r_frac: f64,
    /// Lookahead step; defaults to `lr`.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_regularizer")]
    pub regularizer: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_greedy")]
    pub greedy: String,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub corruption: Option<Corruption>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default = "default_true")]
    pub record_timing: bool,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    /// Any of `glister`, `d_glister`, `random`, `fass`.
    pub strategies: Vec<String>,
    pub rounds: usize,
    pub batch: usize,
    #[serde(default = "default_epochs")]
    pub epochs_per_round: usize,
    #[serde(default = "default_initial")]
    pub initial_labeled: usize,
    #[serde(default = "default_filter_mult")]
    pub filter_mult: usize,
    /// Refreshes per acquisition; overrides `r_frac` of the batch.
    #[serde(default)]
    pub refreshes: Option<usize>,
    #[serde(default = "default_r_frac")]
    pub r_frac: f64,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(default = "default_greedy")]
    pub greedy: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    pub output_dir: PathBuf,
}

fn default_initial() -> usize {
    glister_core::active::DEFAULT_SEED_LABELS
}
fn default_filter_mult() -> usize {
    2
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{name}: {msg}"))
}

fn check_schema(v: u32) -> Result<(), CliError> {
    if v != SCHEMA_VERSION {
        return Err(field("schema_version", format!("unsupported version {v}, expected {SCHEMA_VERSION}")));
    }
    Ok(())
}

fn check_dataset(d: &DatasetSource) -> Result<(), CliError> {
    match d {
        DatasetSource::Synthetic { kind, n_per_class, .. } => {
            kind.parse::<SyntheticKind>().map_err(|e| field("dataset.kind", e))?;
            if *n_per_class < 2 {
                return Err(field("dataset.n_per_class", "must be at least 2"));
            }
        }
        DatasetSource::Libsvm { split: Some(s), .. } => {
            SplitSpec::new(s[0], s[1], s[2], 0).map_err(|e| field("dataset.split", e))?;
        }
        DatasetSource::Libsvm { .. } => {}
    }
    Ok(())
}

fn check_seeds(seeds: &[u64]) -> Result<(), CliError> {
    if seeds.is_empty() {
        return Err(field("seeds", "must list at least one seed"));
    }
    Ok(())
}

fn parse_loss(s: &str) -> Result<LossKind, CliError> {
    s.parse::<LossKind>().map_err(|e| field("loss", e))
}

/// Runtime form of the selection knobs for budget `k`.
pub fn glister_config(
    knobs: &SelectionKnobs,
    k: usize,
    select_every: usize,
    seed: u64,
    record_timing: bool,
) -> Result<GlisterConfig, CliError> {
    let loss = parse_loss(&knobs.loss)?;
    let regularizer: Regularizer = knobs.regularizer.parse().map_err(|e| field("regularizer", e))?;
    let greedy: GreedyKind = knobs.greedy.parse().map_err(|e| field("greedy", e))?;
    let mut cfg = GlisterConfig::new(k, loss, seed);
    cfg.select_every = select_every;
    cfg.rounds = knobs.rounds.unwrap_or_else(|| rounds_for_fraction(k, knobs.r_frac)).min(k.max(1));
    cfg.lr = knobs.lr;
    cfg.eta = knobs.eta.unwrap_or(knobs.lr);
    cfg.batch_size = knobs.batch_size;
    cfg.regularizer = regularizer;
    cfg.lambda = knobs.lambda.unwrap_or(regularizer.default_lambda());
    cfg.greedy = greedy;
    cfg.epsilon = knobs.epsilon;
    cfg.record_timing = record_timing;
    cfg.validate().map_err(|e| field("selection", e))?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve_dataset(&mut self.dataset, base);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn knobs(&self) -> SelectionKnobs {
        SelectionKnobs {
            loss: self.loss.clone(),
            rounds: self.rounds,
            r_frac: self.r_frac,
            eta: self.eta,
            lr: self.lr,
            batch_size: self.batch_size,
            regularizer: self.regularizer.clone(),
            lambda: self.lambda,
            greedy: self.greedy.clone(),
            epsilon: self.epsilon,
        }
    }

    pub fn strategies(&self) -> Result<Vec<SelectionStrategy>, CliError> {
        self.strategies
            .iter()
            .map(|s| s.parse().map_err(|e| field("strategies", e)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_schema(self.schema_version)?;
        check_dataset(&self.dataset)?;
        let strategies = self.strategies()?;
        if strategies.is_empty() {
            return Err(field("strategies", "must list at least one strategy"));
        }
        let needs_budget = strategies.iter().any(|&s| s != SelectionStrategy::Full);
        if needs_budget && self.budgets.is_empty() {
            return Err(field("budgets", "required for subset strategies"));
        }
        if let Some(b) = self.budgets.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return Err(field("budgets", format!("{b} outside (0, 1]")));
        }
        if self.select_every == 0 {
            return Err(field("select_every", "must be at least 1"));
        }
        if !(self.r_frac > 0.0 && self.r_frac <= 1.0) {
            return Err(field("r_frac", "must lie in (0, 1]"));
        }
        if self.rounds == Some(0) {
            return Err(field("rounds", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(field("epochs", "must be at least 1"));
        }
        check_seeds(&self.seeds)?;
        if let Some(c) = &self.corruption {
            if let Some(r) = c.noise_rate {
                if !(0.0..1.0).contains(&r) {
                    return Err(field("corruption.noise_rate", "must lie in [0, 1)"));
                }
            }
            if let Some(i) = &c.imbalance {
                for (n, v) in [("affected_class_frac", i.affected_class_frac), ("keep_frac", i.keep_frac)] {
                    if !(v > 0.0 && v < 1.0) {
                        return Err(field(&format!("corruption.imbalance.{n}"), "must lie in (0, 1)"));
                    }
                }
            }
        }
        glister_config(&self.knobs(), 1, self.select_every, 0, self.record_timing)?;
        Ok(())
    }
}

impl ActiveExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve_dataset(&mut cfg.dataset, base);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_schema(self.schema_version)?;
        check_dataset(&self.dataset)?;
        if self.strategies.is_empty() {
            return Err(field("strategies", "must list at least one strategy"));
        }
        for s in &self.strategies {
            if !matches!(s.as_str(), "glister" | "d_glister" | "random" | "fass") {
                return Err(field("strategies", format!("unknown acquisition strategy {s:?}")));
            }
        }
        if self.rounds == 0 {
            return Err(field("rounds", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(field("batch", "must be at least 1"));
        }
        if self.epochs_per_round == 0 {
            return Err(field("epochs_per_round", "must be at least 1"));
        }
        if self.initial_labeled == 0 {
            return Err(field("initial_labeled", "must be at least 1"));
        }
        if self.filter_mult == 0 {
            return Err(field("filter_mult", "must be at least 1"));
        }
        if self.refreshes == Some(0) {
            return Err(field("refreshes", "must be at least 1"));
        }
        if !(self.r_frac > 0.0 && self.r_frac <= 1.0) {
            return Err(field("r_frac", "must lie in (0, 1]"));
        }
        check_seeds(&self.seeds)?;
        self.knobs("glister")?;
        Ok(())
    }

    /// Selection knobs for one acquisition strategy.
    pub fn knobs(&self, strategy: &str) -> Result<SelectionKnobs, CliError> {
        let regularizer = if strategy == "d_glister" { Regularizer::Diversity } else { Regularizer::None };
        let knobs = SelectionKnobs {
            loss: self.loss.clone(),
            rounds: Some(self.refreshes.unwrap_or_else(|| rounds_for_fraction(self.batch, self.r_frac))),
            r_frac: self.r_frac,
            eta: self.eta,
            lr: self.lr,
            batch_size: self.batch_size,
            regularizer: regularizer.name().into(),
            lambda: self.lambda,
            greedy: self.greedy.clone(),
            epsilon: DEFAULT_STOCHASTIC_EPS,
        };
        glister_config(&knobs, self.batch, 1, 0, false)?;
        Ok(knobs)
    }
}

fn resolve_dataset(d: &mut DatasetSource, base: &Path) {
    if let DatasetSource::Libsvm { train, val, test, .. } = d {
        for p in std::iter::once(train).chain(val.iter_mut()).chain(test.iter_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Train, validation and test sets for one seed.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Largest row norm of the training features after preprocessing.
    pub max_row_norm: f64,
}

const DEFAULT_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

fn read_libsvm(path: &Path) -> anyhow::Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(parse_libsvm(&text)?)
}

/// Materializes the dataset for `seed`, applies corruption to the training
/// split and optionally standardizes with training statistics.
pub fn load_splits(
    source: &DatasetSource,
    seed: u64,
    corruption: Option<&Corruption>,
    standardize: bool,
) -> anyhow::Result<Splits> {
    let (train, val, test) = match source {
        DatasetSource::Synthetic { kind, n_per_class, val_per_class, test_per_class } => {
            let kind: SyntheticKind = kind.parse()?;
            let syn = gen_synthetic(kind, *n_per_class, seed)?;
            let nv = val_per_class.unwrap_or((*n_per_class / 10).max(2));
            let nt = test_per_class.unwrap_or((*n_per_class / 2).max(2));
            let val = match syn.shifted_validation {
                Some(shifted) => {
                    let rows: Vec<usize> = shifted
                        .rows_by_class()
                        .iter()
                        .flat_map(|g| g.iter().copied().take(nv))
                        .collect();
                    shifted.subset(&rows)
                }
                None => gen_synthetic(kind, nv, derive_seed(seed, 1))?.data,
            };
            let test = gen_synthetic(kind, nt, derive_seed(seed, 2))?.data;
            (syn.data, val, test)
        }
        DatasetSource::Libsvm { train, val, test, split: frac } => {
            let full = read_libsvm(train)?;
            let f = frac.unwrap_or(DEFAULT_SPLIT);
            match (val, test) {
                (Some(v), Some(t)) => (full, read_libsvm(v)?, read_libsvm(t)?),
                _ => {
                    let (tr, va, te) = split(&full, &SplitSpec::new(f[0], f[1], f[2], seed)?)?;
                    let va = match val {
                        Some(v) => read_libsvm(v)?,
                        None => va,
                    };
                    let te = match test {
                        Some(t) => read_libsvm(t)?,
                        None => te,
                    };
                    (tr, va, te)
                }
            }
        }
    };
    let mut train = train;
    if let Some(c) = corruption {
        if let Some(i) = &c.imbalance {
            train = inject_class_imbalance(&train, i.affected_class_frac, i.keep_frac, derive_seed(seed, 4))?;
        }
        if let Some(r) = c.noise_rate {
            train = inject_label_noise(&train, r, derive_seed(seed, 3))?;
        }
    }
    let (train, val, test) = if standardize {
        let st = Standardizer::fit(train.features());
        (
            train.with_features(st.apply(train.features())?)?,
            val.with_features(st.apply(val.features())?)?,
            test.with_features(st.apply(test.features())?)?,
        )
    } else {
        (train, val, test)
    };
    let max_row_norm = train.features().max_row_norm();
    Ok(Splits { train, val, test, max_row_norm })
}
