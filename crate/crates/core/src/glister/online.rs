//! Online training with periodic subset reselection, and its trace.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::models::{accuracy, grad_full, loss_value, sgd_epoch, ModelParams, ModelSpec};
use crate::numerics::{derive_seed, dot, norm, SeededRng};

use super::dss::greedy_dss;
use super::gain::SelectionContext;
use super::GlisterConfig;

pub const TRACE_HEADER: &str =
    "epoch,wall_s,sel_s,train_loss,full_train_loss,val_loss,test_acc,subset_digest,dot_vt,cos_theta,grad_norm_t,lr_bound";

/// Produces a training subset from the current parameters.
pub trait Selector {
    fn select(&mut self, params: &ModelParams, rng: &mut SeededRng) -> Result<Vec<usize>>;
}

/// GLISTER selection over the training set with true labels.
pub struct GlisterSelector<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub cfg: &'a GlisterConfig,
}

impl Selector for GlisterSelector<'_> {
    fn select(&mut self, params: &ModelParams, rng: &mut SeededRng) -> Result<Vec<usize>> {
        let ctx = SelectionContext::from_datasets(params, self.train, self.val, self.cfg.loss)?;
        greedy_dss(&ctx, self.cfg, rng)
    }
}

/// Gradient diagnostics at a selection epoch, taken at the parameters the
/// epoch starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRecord {
    /// `grad L_V . grad L_T(S)`.
    pub dot_vt: f64,
    pub cos_theta: f64,
    pub grad_norm_t: f64,
    pub grad_norm_v: f64,
    /// Filled in once the whole trace is known.
    pub lr_bound: f64,
    pub val_loss_before: f64,
    pub theta: Vec<f64>,
    pub grad_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cumulative seconds since training started, selection included.
    pub wall_s: f64,
    pub sel_s: f64,
    /// Summed losses after the epoch.
    pub train_loss: f64,
    pub full_train_loss: f64,
    pub val_loss: f64,
    pub test_acc: f64,
    pub subset_digest: String,
    pub monitor: Option<MonitorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub lr: f64,
    pub records: Vec<EpochRecord>,
}

/// One parsed CSV row; monitor fields are `None` when empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceCsvRow {
    pub epoch: usize,
    pub wall_s: f64,
    pub sel_s: f64,
    pub train_loss: f64,
    pub full_train_loss: f64,
    pub val_loss: f64,
    pub test_acc: f64,
    pub subset_digest: String,
    pub dot_vt: Option<f64>,
    pub cos_theta: Option<f64>,
    pub grad_norm_t: Option<f64>,
    pub lr_bound: Option<f64>,
}

impl RunTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.wall_s, r.sel_s, r.train_loss, r.full_train_loss, r.val_loss, r.test_acc, r.subset_digest
            );
            match &r.monitor {
                Some(m) => {
                    let _ = writeln!(s, ",{},{},{},{}", m.dot_vt, m.cos_theta, m.grad_norm_t, m.lr_bound);
                }
                None => s.push_str(",,,,\n"),
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Vec<TraceCsvRow>> {
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(invalid("trace CSV header mismatch"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| invalid(format!("bad number {s:?}")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        lines
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 12 {
                    return Err(invalid(format!("trace row has {} fields", f.len())));
                }
                Ok(TraceCsvRow {
                    epoch: f[0].parse().map_err(|_| invalid("bad epoch"))?,
                    wall_s: num(f[1])?,
                    sel_s: num(f[2])?,
                    train_loss: num(f[3])?,
                    full_train_loss: num(f[4])?,
                    val_loss: num(f[5])?,
                    test_acc: num(f[6])?,
                    subset_digest: f[7].to_string(),
                    dot_vt: opt(f[8])?,
                    cos_theta: opt(f[9])?,
                    grad_norm_t: opt(f[10])?,
                    lr_bound: opt(f[11])?,
                })
            })
            .collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn selection_records(&self) -> impl Iterator<Item = (&EpochRecord, &MonitorRecord)> {
        self.records.iter().filter_map(|r| r.monitor.as_ref().map(|m| (r, m)))
    }

    /// Largest `|grad L_V(a) - grad L_V(b)| / |theta_a - theta_b|` over
    /// consecutive selection epochs; `None` with fewer than two.
    pub fn lipschitz_estimate(&self) -> Option<f64> {
        let mons: Vec<&MonitorRecord> = self.selection_records().map(|(_, m)| m).collect();
        let mut best: Option<f64> = None;
        for w in mons.windows(2) {
            let dtheta: Vec<f64> = w[1].theta.iter().zip(&w[0].theta).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = w[1].grad_v.iter().zip(&w[0].grad_v).map(|(a, b)| a - b).collect();
            let dn = norm(&dtheta);
            if dn > 0.0 {
                let ratio = norm(&dg) / dn;
                best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
            }
        }
        best
    }

    pub fn sigma_estimate(&self) -> f64 {
        self.selection_records().map(|(_, m)| m.grad_norm_t).fold(0.0, f64::max)
    }

    /// `2 |grad L_V| cos / (L sigma_T)` with the trace-level estimates.
    pub fn lr_bound_for(&self, m: &MonitorRecord) -> f64 {
        let sigma = self.sigma_estimate();
        match self.lipschitz_estimate() {
            Some(l) if l > 0.0 && sigma > 0.0 => 2.0 * m.grad_norm_v * m.cos_theta / (l * sigma),
            _ => f64::INFINITY,
        }
    }

    fn finalize(&mut self) {
        let bounds: Vec<Option<f64>> =
            self.records.iter().map(|r| r.monitor.as_ref().map(|m| self.lr_bound_for(m))).collect();
        for (r, b) in self.records.iter_mut().zip(bounds) {
            if let (Some(m), Some(b)) = (r.monitor.as_mut(), b) {
                m.lr_bound = b;
            }
        }
    }
}

/// Hex SHA-256 (first 16 digits) of the sorted indices as little-endian
/// `u64`s.
pub fn subset_digest(set: &[usize]) -> String {
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for i in sorted {
        h.update((i as u64).to_le_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

/// Stream used for SGD shuffling in [`train_with_selector`].
pub fn training_rng(seed: u64) -> SeededRng {
    SeededRng::new(seed).child(1)
}

fn selection_rng(seed: u64) -> SeededRng {
    SeededRng::new(seed).child(2)
}

/// Seed of the initial parameters in [`train_with_selector`].
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, 0)
}

/// Trains for `epochs` epochs, reselecting every `cfg.select_every`
/// epochs starting at 0. The subset is sorted before training so the
/// shuffle does not depend on selection order.
pub fn train_with_selector(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    model: ModelSpec,
    cfg: &GlisterConfig,
    epochs: usize,
    selector: &mut dyn Selector,
) -> Result<(ModelParams, Vec<usize>, RunTrace)> {
    if epochs == 0 {
        return Err(invalid("epochs must be at least 1"));
    }
    cfg.validate()?;
    let out = cfg.loss.output_width(train.num_classes());
    let params = ModelParams::init(model, train.dim(), out, init_seed(cfg.seed));
    train_from(train, val, test, params, cfg, epochs, selector)
}

/// As [`train_with_selector`] starting from given parameters.
pub fn train_from(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    mut params: ModelParams,
    cfg: &GlisterConfig,
    epochs: usize,
    selector: &mut dyn Selector,
) -> Result<(ModelParams, Vec<usize>, RunTrace)> {
    if epochs == 0 {
        return Err(invalid("epochs must be at least 1"));
    }
    cfg.validate()?;
    let kind = cfg.loss;
    let mut train_rng = training_rng(cfg.seed);
    let mut sel_rng = selection_rng(cfg.seed);
    let start = Instant::now();
    let mut subset: Vec<usize> = Vec::new();
    let mut digest = String::new();
    let mut trace = RunTrace { lr: cfg.lr, records: Vec::with_capacity(epochs) };
    let mut val_loss = loss_value(&params, val.features(), val.labels(), kind)?;
    for epoch in 0..epochs {
        let mut sel_s = 0.0;
        let mut monitor = None;
        if epoch % cfg.select_every == 0 {
            let t0 = Instant::now();
            let mut s = selector.select(&params, &mut sel_rng)?;
            sel_s = t0.elapsed().as_secs_f64();
            s.sort_unstable();
            subset = s;
            digest = subset_digest(&subset);
            monitor = Some(monitor_record(&params, train, val, &subset, cfg, val_loss)?);
        }
        params = sgd_epoch(&params, train, &subset, cfg.lr, cfg.batch_size, kind, &mut train_rng)?;
        let xs = train.features().select_rows(&subset);
        let ys: Vec<usize> = subset.iter().map(|&i| train.labels()[i]).collect();
        let train_loss = loss_value(&params, &xs, &ys, kind)?;
        let full_train_loss = loss_value(&params, train.features(), train.labels(), kind)?;
        val_loss = loss_value(&params, val.features(), val.labels(), kind)?;
        let test_acc = accuracy(&params, test)?;
        let (wall_s, sel_s) =
            if cfg.record_timing { (start.elapsed().as_secs_f64(), sel_s) } else { (0.0, 0.0) };
        trace.records.push(EpochRecord {
            epoch,
            wall_s,
            sel_s,
            train_loss,
            full_train_loss,
            val_loss,
            test_acc,
            subset_digest: digest.clone(),
            monitor,
        });
    }
    trace.finalize();
    Ok((params, subset, trace))
}

fn monitor_record(
    params: &ModelParams,
    train: &Dataset,
    val: &Dataset,
    subset: &[usize],
    cfg: &GlisterConfig,
    val_loss_before: f64,
) -> Result<MonitorRecord> {
    let gv = grad_full(params, val.features(), val.labels(), cfg.loss)?.to_vec();
    let xs = train.features().select_rows(subset);
    let ys: Vec<usize> = subset.iter().map(|&i| train.labels()[i]).collect();
    let gt = grad_full(params, &xs, &ys, cfg.loss)?.to_vec();
    let d = dot(&gv, &gt);
    let (nv, nt) = (norm(&gv), norm(&gt));
    let cos_theta = if nv > 0.0 && nt > 0.0 { d / (nv * nt) } else { 0.0 };
    Ok(MonitorRecord {
        dot_vt: d,
        cos_theta,
        grad_norm_t: nt,
        grad_norm_v: nv,
        lr_bound: f64::INFINITY,
        val_loss_before,
        theta: params.to_vec(),
        grad_v: gv,
    })
}

/// Online GLISTER training: select with [`greedy_dss`] every
/// `cfg.select_every` epochs, one SGD epoch on the subset per epoch.
pub fn glister_online_train(
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    model: ModelSpec,
    cfg: &GlisterConfig,
    epochs: usize,
) -> Result<(ModelParams, Vec<usize>, RunTrace)> {
    let mut sel = GlisterSelector { train, val, cfg };
    train_with_selector(train, val, test, model, cfg, epochs, &mut sel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, split, SplitSpec, SyntheticKind};
    use crate::glister::Regularizer;
    use crate::models::LossKind;

    fn splits(seed: u64) -> (Dataset, Dataset, Dataset) {
        let ds = gen_synthetic(SyntheticKind::Separable2, 60, seed).unwrap().data;
        split(&ds, &SplitSpec::new(0.7, 0.15, 0.15, seed).unwrap()).unwrap()
    }

    struct Counting(usize, Vec<usize>);

    impl Selector for Counting {
        fn select(&mut self, _: &ModelParams, _: &mut SeededRng) -> Result<Vec<usize>> {
            self.0 += 1;
            Ok(self.1.clone())
        }
    }

    #[test]
    fn select_every_larger_than_epochs_selects_once() {
        let (tr, va, te) = splits(1);
        let mut cfg = GlisterConfig::new(10, LossKind::CrossEntropy, 3);
        cfg.select_every = 50;
        let mut sel = Counting(0, (0..10).collect());
        let (_, _, trace) = train_with_selector(&tr, &va, &te, ModelSpec::Logistic, &cfg, 7, &mut sel).unwrap();
        assert_eq!(sel.0, 1);
        assert_eq!(trace.records.len(), 7);
        assert_eq!(trace.selection_records().count(), 1);
        assert!(trace.records.windows(2).all(|w| w[0].epoch < w[1].epoch));
    }

    #[test]
    fn full_budget_matches_plain_sgd() {
        let (tr, va, te) = splits(2);
        let mut cfg = GlisterConfig::new(tr.len(), LossKind::CrossEntropy, 4);
        cfg.rounds = 2;
        cfg.select_every = 3;
        let (p, s, _) = glister_online_train(&tr, &va, &te, ModelSpec::Mlp { hidden: 8 }, &cfg, 6).unwrap();
        assert_eq!(s, (0..tr.len()).collect::<Vec<_>>());
        let mut q = ModelParams::init(ModelSpec::Mlp { hidden: 8 }, 2, 2, init_seed(4));
        let mut rng = training_rng(4);
        for _ in 0..6 {
            q = sgd_epoch(&q, &tr, &s, cfg.lr, cfg.batch_size, LossKind::CrossEntropy, &mut rng).unwrap();
        }
        assert_eq!(p, q);
    }

    #[test]
    fn none_regularizer_ignores_lambda() {
        let (tr, va, te) = splits(3);
        let mut cfg = GlisterConfig::new(12, LossKind::CrossEntropy, 5);
        cfg.select_every = 2;
        cfg.record_timing = false;
        let a = glister_online_train(&tr, &va, &te, ModelSpec::Logistic, &cfg, 5).unwrap().2;
        cfg.lambda = 42.0;
        cfg.regularizer = Regularizer::None;
        let b = glister_online_train(&tr, &va, &te, ModelSpec::Logistic, &cfg, 5).unwrap().2;
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let (tr, va, te) = splits(4);
        let mut cfg = GlisterConfig::new(8, LossKind::CrossEntropy, 6);
        cfg.select_every = 2;
        let (_, _, trace) = glister_online_train(&tr, &va, &te, ModelSpec::Logistic, &cfg, 5).unwrap();
        let csv = trace.to_csv();
        let rows = RunTrace::parse_csv(&csv).unwrap();
        assert_eq!(rows.len(), 5);
        for (row, rec) in rows.iter().zip(&trace.records) {
            assert_eq!(row.dot_vt.is_some(), rec.epoch % 2 == 0);
            assert_eq!(row.val_loss, rec.val_loss);
            assert_eq!(row.subset_digest, rec.subset_digest);
        }
        assert!(rows.iter().all(|r| r.wall_s >= r.sel_s));
    }

    #[test]
    fn digest_is_order_free() {
        assert_eq!(subset_digest(&[3, 1, 2]), subset_digest(&[1, 2, 3]));
        assert_ne!(subset_digest(&[1, 2]), subset_digest(&[1, 3]));
        assert_eq!(subset_digest(&[]).len(), 16);
    }
}
