//! Validation-driven data subset selection.
//!
//! The crate selects a budgeted subset of training rows whose one-step
//! gradient update most improves the log-likelihood of a held-out
//! validation set. Selection is solved with greedy set-function
//! maximization over a Taylor-linearized gain, refreshed `r` times per
//! selection. Around that core sit the pieces needed to run experiments:
//! dense numerics, LIBSVM ingestion and corruption injectors, tiny
//! differentiable classifiers, generic submodular maximizers, baseline
//! selectors and a batch active-learning loop.

pub mod active;
pub mod baselines;
pub mod data;
pub mod error;
pub mod glister;
pub mod models;
pub mod numerics;
pub mod submodular;

pub use active::{ActiveConfig, PoolState};
pub use baselines::SelectionStrategy;
pub use data::{Dataset, RowFlags, SplitSpec, SyntheticKind};
pub use error::{Error, Result};
pub use glister::{GlisterConfig, GreedyKind, Regularizer, RunTrace};
pub use models::{Activation, LossKind, ModelParams, ModelSpec};
pub use numerics::{DenseMatrix, SeededRng};
pub use submodular::{MatroidQuota, SetFunction};
