//! Fixed workloads for the criterion benchmarks.

use glister_core::data::Dataset;
use glister_core::models::{LossKind, ModelParams, ModelSpec};
use glister_core::numerics::{derive_seed, DenseMatrix, SeededRng};
use glister_core::Result;

/// Two classes split by a random hyperplane, standard normal features.
pub fn linear_blobs(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    let mut rng = SeededRng::new(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        labels.push(usize::from(row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() > 0.0));
        data.extend(row);
    }
    Dataset::new(DenseMatrix::from_vec(n, d, data)?, labels, 2)
}

pub struct Workload {
    pub train: Dataset,
    pub val: Dataset,
    pub params: ModelParams,
    pub kind: LossKind,
}

impl Workload {
    /// `n` training rows, `n / 10` validation rows, default MLP.
    pub fn new(n: usize, d: usize, seed: u64) -> Result<Self> {
        let kind = LossKind::CrossEntropy;
        Ok(Self {
            train: linear_blobs(n, d, seed)?,
            val: linear_blobs((n / 10).max(2), d, derive_seed(seed, 1))?,
            params: ModelParams::init(ModelSpec::mlp(), d, kind.output_width(2), seed),
            kind,
        })
    }
}
