//! Validation-driven subset selection: the Taylor gain, the r-round greedy
//! selector, loss-specific proxy set functions, the online training loop
//! and its convergence monitors.

mod dss;
mod gain;
mod monitor;
mod online;
mod proxy;

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::models::{LossKind, DEFAULT_LR};
use crate::submodular::DEFAULT_STOCHASTIC_EPS;

pub use dss::{greedy_dss, round_sizes};
pub use gain::{exact_gain, taylor_gain, GainState, SelectionContext};
pub use monitor::{monitor_theorem2, monitor_theorem3, Theorem2Report, Theorem2Row, Theorem3Report};
pub use online::{
    glister_online_train, init_seed, subset_digest, train_from, train_with_selector, training_rng, EpochRecord, GlisterSelector,
    MonitorRecord, RunTrace, Selector, TraceCsvRow, TRACE_HEADER,
};
pub use proxy::{proxy_objective, ProxyObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regularizer {
    None,
    /// Additive `lambda * R(e | S)` with `R` facility location over the
    /// candidates' input features.
    FacilityLocation,
    /// Mixing: `round(lambda * k)` picked by gain, the rest at random.
    Random,
    /// Additive `lambda * sum_{j in S} |x_e - x_j|` (dispersion).
    Diversity,
}

impl Regularizer {
    pub const ALL: [Regularizer; 4] =
        [Regularizer::None, Regularizer::FacilityLocation, Regularizer::Random, Regularizer::Diversity];

    pub fn name(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::FacilityLocation => "facility_location",
            Regularizer::Random => "random",
            Regularizer::Diversity => "diversity",
        }
    }

    /// Default weight for each regularizer.
    pub fn default_lambda(self) -> f64 {
        match self {
            Regularizer::None => 0.0,
            Regularizer::FacilityLocation => 100.0,
            Regularizer::Random => 0.9,
            Regularizer::Diversity => 1.0,
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regularizer::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| invalid(format!("unknown regularizer {s:?}")))
    }
}

/// Greedy driver used inside each selection round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GreedyKind {
    Naive,
    Lazy,
    Stochastic,
    Randomized,
}

impl GreedyKind {
    pub const ALL: [GreedyKind; 4] = [GreedyKind::Naive, GreedyKind::Lazy, GreedyKind::Stochastic, GreedyKind::Randomized];

    pub fn name(self) -> &'static str {
        match self {
            GreedyKind::Naive => "naive",
            GreedyKind::Lazy => "lazy",
            GreedyKind::Stochastic => "stochastic",
            GreedyKind::Randomized => "randomized",
        }
    }
}

impl fmt::Display for GreedyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GreedyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GreedyKind::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| invalid(format!("unknown greedy kind {s:?}")))
    }
}

pub const DEFAULT_SELECT_EVERY: usize = 20;
pub const DEFAULT_BATCH: usize = 20;

/// Selection and training knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct GlisterConfig {
    /// Budget `k`.
    pub k: usize,
    /// Selection interval `L` in epochs.
    pub select_every: usize,
    /// Exact validation-gradient refreshes per selection (`r`).
    pub rounds: usize,
    /// Lookahead step.
    pub eta: f64,
    /// SGD learning rate.
    pub lr: f64,
    pub batch_size: usize,
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub greedy: GreedyKind,
    pub epsilon: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// When false, timing columns are written as zeros so traces are
    /// byte-reproducible.
    pub record_timing: bool,
}

impl GlisterConfig {
    /// Defaults with `r = ceil(0.03 k)` and `eta = lr`.
    pub fn new(k: usize, loss: LossKind, seed: u64) -> Self {
        Self {
            k,
            select_every: DEFAULT_SELECT_EVERY,
            rounds: rounds_for_fraction(k, 0.03),
            eta: DEFAULT_LR,
            lr: DEFAULT_LR,
            batch_size: DEFAULT_BATCH,
            regularizer: Regularizer::None,
            lambda: 0.0,
            greedy: GreedyKind::Naive,
            epsilon: DEFAULT_STOCHASTIC_EPS,
            loss,
            seed,
            record_timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(invalid("rounds must be at least 1"));
        }
        if self.select_every == 0 {
            return Err(invalid("select_every must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid("lambda must be a finite non-negative number"));
        }
        if self.regularizer == Regularizer::Random && self.lambda > 1.0 {
            return Err(invalid("random mixing needs lambda in [0, 1]"));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(invalid("eta must be finite and non-negative"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(invalid("lr must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid("epsilon must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Weight actually applied, zero when no regularizer is configured.
    pub fn effective_lambda(&self) -> f64 {
        match self.regularizer {
            Regularizer::None => 0.0,
            _ => self.lambda,
        }
    }
}

/// `max(1, ceil(frac * k))`.
pub fn rounds_for_fraction(k: usize, frac: f64) -> usize {
    let r = (frac * k as f64 - 1e-9).ceil();
    (r as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for r in Regularizer::ALL {
            assert_eq!(r.name().parse::<Regularizer>().unwrap(), r);
        }
        for g in GreedyKind::ALL {
            assert_eq!(g.name().parse::<GreedyKind>().unwrap(), g);
        }
        assert!("fancy".parse::<GreedyKind>().is_err());
    }

    #[test]
    fn config_defaults_and_checks() {
        let c = GlisterConfig::new(500, LossKind::CrossEntropy, 0);
        assert_eq!(c.rounds, 15);
        assert_eq!(rounds_for_fraction(100, 0.03), 3);
        assert_eq!(rounds_for_fraction(10, 0.03), 1);
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.rounds = 0;
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.regularizer = Regularizer::Random;
        bad.lambda = 2.0;
        assert!(bad.validate().is_err());
    }
}
