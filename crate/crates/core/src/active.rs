//! Batch active learning over an unlabeled pool. Candidates are scored
//! with hypothesized labels; true labels come only from a [`LabelOracle`]
//! and only for rows that were acquired.

use std::io::Write as _;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::glister::{greedy_dss, init_seed, subset_digest, training_rng, GlisterConfig, SelectionContext};
use crate::models::{accuracy, hypothesized_labels, loss_value, probabilities, sgd_epoch_xy, ModelParams, ModelSpec};
use crate::numerics::{DenseMatrix, SeededRng};
use crate::submodular::{lazy_greedy, FacilityLocation, MatroidQuota};

pub const DEFAULT_SEED_LABELS: usize = 20;
pub const DEFAULT_EPOCHS_PER_ROUND: usize = 200;
pub const ACTIVE_TRACE_HEADER: &str = "round,labeled_count,val_loss,test_acc,batch_digest";

/// Source of ground-truth labels for pool rows.
pub trait LabelOracle {
    fn reveal(&mut self, idx: usize) -> usize;
}

/// Oracle backed by a fully labeled dataset.
pub struct DatasetOracle<'a>(pub &'a Dataset);

impl LabelOracle for DatasetOracle<'_> {
    fn reveal(&mut self, idx: usize) -> usize {
        self.0.labels()[idx]
    }
}

/// Labeled / unlabeled partition of the pool plus the acquisition history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolState {
    pool_size: usize,
    initial: Vec<usize>,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    rounds_completed: usize,
    batches: Vec<Vec<usize>>,
}

impl PoolState {
    pub fn new(pool_size: usize, initial_labeled: &[usize]) -> Result<Self> {
        let mut seen = vec![false; pool_size];
        for &i in initial_labeled {
            if i >= pool_size {
                return Err(invalid(format!("initial index {i} outside pool of {pool_size}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(invalid(format!("initial index {i} repeated")));
            }
        }
        Ok(Self {
            pool_size,
            initial: initial_labeled.to_vec(),
            labeled: initial_labeled.to_vec(),
            unlabeled: (0..pool_size).filter(|&i| !seen[i]).collect(),
            rounds_completed: 0,
            batches: Vec::new(),
        })
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    /// Ascending.
    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn rounds_completed(&self) -> usize {
        self.rounds_completed
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    /// Moves `batch` from unlabeled to labeled and closes the round.
    pub fn acquire(&mut self, batch: &[usize]) -> Result<()> {
        let mut take = vec![false; self.pool_size];
        for &i in batch {
            if i >= self.pool_size || self.unlabeled.binary_search(&i).is_err() {
                return Err(invalid(format!("row {i} is not unlabeled")));
            }
            if std::mem::replace(&mut take[i], true) {
                return Err(invalid(format!("row {i} acquired twice in one batch")));
            }
        }
        self.unlabeled.retain(|&i| !take[i]);
        self.labeled.extend_from_slice(batch);
        self.batches.push(batch.to_vec());
        self.rounds_completed += 1;
        self.check_invariants()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let broken = |m: &str| Err(Error::Infeasible(format!("pool state: {m}")));
        let mut owner = vec![0u8; self.pool_size];
        for &i in &self.labeled {
            owner[i] += 1;
        }
        for &i in &self.unlabeled {
            owner[i] += 2;
        }
        if owner.iter().any(|&o| o != 1 && o != 2) {
            return broken("labeled and unlabeled must partition the pool");
        }
        let mut acquired = vec![false; self.pool_size];
        for &i in self.initial.iter().chain(self.batches.iter().flatten()) {
            if std::mem::replace(&mut acquired[i], true) {
                return broken("batches overlap");
            }
        }
        if self.labeled.len() != self.initial.len() + self.batches.iter().map(Vec::len).sum::<usize>() {
            return broken("labeled set differs from seed set plus batches");
        }
        if self.batches.len() != self.rounds_completed {
            return broken("round count out of sync");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acquisition {
    Glister,
    Random,
    /// Entropy filter to `filter_mult * B` rows, then per-class coverage.
    Fass { filter_mult: usize },
}

impl Acquisition {
    pub fn name(self) -> &'static str {
        match self {
            Acquisition::Glister => "glister",
            Acquisition::Random => "random",
            Acquisition::Fass { .. } => "fass",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveConfig {
    /// Acquisition rounds `R`.
    pub rounds: usize,
    /// Rows acquired per round `B`.
    pub batch: usize,
    pub epochs_per_round: usize,
    /// Training and scoring knobs; `k` is overridden by `batch` and the
    /// refresh count is capped at `batch`.
    pub selection: GlisterConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveRecord {
    pub round: usize,
    pub labeled_count: usize,
    pub val_loss: f64,
    pub test_acc: f64,
    pub batch_digest: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActiveTrace {
    pub records: Vec<ActiveRecord>,
}

impl ActiveTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(ACTIVE_TRACE_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{:e},{:e},{}\n",
                r.round, r.labeled_count, r.val_loss, r.test_acc, r.batch_digest
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(ACTIVE_TRACE_HEADER) {
            return Err(Error::Format { line: 1, msg: "unexpected header".into() });
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = |msg: &str| Error::Format { line: n + 2, msg: msg.into() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            records.push(ActiveRecord {
                round: f[0].parse().map_err(|_| bad("round"))?,
                labeled_count: f[1].parse().map_err(|_| bad("labeled_count"))?,
                val_loss: f[2].parse().map_err(|_| bad("val_loss"))?,
                test_acc: f[3].parse().map_err(|_| bad("test_acc"))?,
                batch_digest: f[4].to_string(),
            });
        }
        Ok(Self { records })
    }
}

#[derive(Debug, Clone)]
pub struct ActiveOutcome {
    pub params: ModelParams,
    pub state: PoolState,
    pub trace: ActiveTrace,
}

/// Class-stratified random seed set of `size` rows, quotas by largest
/// remainder over the pool's class counts.
pub fn stratified_seed_set(pool: &Dataset, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > pool.len() {
        return Err(Error::PoolExhausted { needed: size, available: pool.len() });
    }
    let quotas = MatroidQuota::apportion(size, &pool.class_counts())?;
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(size);
    for (rows, q) in pool.rows_by_class().iter().zip(quotas) {
        out.extend(rng.sample_from(rows, q));
    }
    out.sort_unstable();
    Ok(out)
}

fn check_batch(state: &PoolState, b: usize) -> Result<()> {
    if b > state.unlabeled.len() {
        return Err(Error::PoolExhausted { needed: b, available: state.unlabeled.len() });
    }
    Ok(())
}

/// Uniform batch from the unlabeled rows.
pub fn random_acquire(state: &PoolState, b: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    check_batch(state, b)?;
    Ok(rng.sample_from(&state.unlabeled, b))
}

/// Predictive entropy per row (natural log).
pub fn predictive_entropy(params: &ModelParams, x: &DenseMatrix) -> Result<Vec<f64>> {
    let p = probabilities(params, x)?;
    Ok(p.row_iter().map(|r| r.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()).collect())
}

/// Keeps the `filter_mult * b` highest-entropy unlabeled rows (ties to the
/// lower index), then picks `b` by facility location within hypothesized
/// classes.
pub fn fass_acquire(
    state: &PoolState,
    params: &ModelParams,
    pool_x: &DenseMatrix,
    b: usize,
    filter_mult: usize,
) -> Result<Vec<usize>> {
    if filter_mult < 1 {
        return Err(invalid("filter_mult must be at least 1"));
    }
    check_batch(state, b)?;
    if b == 0 {
        return Ok(Vec::new());
    }
    let unl = &state.unlabeled;
    let x = pool_x.select_rows(unl);
    let ent = predictive_entropy(params, &x)?;
    let mut order: Vec<usize> = (0..unl.len()).collect();
    order.sort_by(|&a, &b| ent[b].total_cmp(&ent[a]).then(a.cmp(&b)));
    order.truncate((filter_mult * b).min(unl.len()));
    let kept = x.select_rows(&order);
    let hyp = hypothesized_labels(params, &kept)?;
    let f = FacilityLocation::new(&kept, Some(&hyp))?;
    Ok(lazy_greedy(&f, b, None)?.into_iter().map(|l| unl[order[l]]).collect())
}

/// Greedy selection over unlabeled rows, with the model's own predictions
/// standing in for their labels.
pub fn glister_acquire(
    state: &PoolState,
    params: &ModelParams,
    pool_x: &DenseMatrix,
    val: &Dataset,
    b: usize,
    cfg: &GlisterConfig,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    check_batch(state, b)?;
    if b == 0 {
        return Ok(Vec::new());
    }
    let unl = &state.unlabeled;
    let x = pool_x.select_rows(unl);
    let hyp = hypothesized_labels(params, &x)?;
    let ctx = SelectionContext::new(params, &x, &hyp, val.features(), val.labels(), cfg.loss)?;
    let mut c = cfg.clone();
    c.k = b;
    c.rounds = c.rounds.min(b);
    Ok(greedy_dss(&ctx, &c, rng)?.into_iter().map(|l| unl[l]).collect())
}

/// Warm-start batch active learning. Trains `E` epochs on the seed set,
/// then each round acquires `B` rows, reveals their labels and trains `E`
/// more epochs from the current parameters. Row `t` of the trace reports
/// the model after round `t`'s training.
#[allow(clippy::too_many_arguments)]
pub fn active_learning(
    pool_x: &DenseMatrix,
    num_classes: usize,
    oracle: &mut dyn LabelOracle,
    val: &Dataset,
    test: &Dataset,
    initial_labeled: &[usize],
    model: ModelSpec,
    cfg: &ActiveConfig,
    acq: Acquisition,
) -> Result<ActiveOutcome> {
    if cfg.rounds == 0 || cfg.epochs_per_round == 0 {
        return Err(invalid("rounds and epochs_per_round must be at least 1"));
    }
    if initial_labeled.is_empty() {
        return Err(invalid("active learning needs a non-empty seed set"));
    }
    let sel = &cfg.selection;
    sel.validate()?;
    let n = pool_x.rows();
    let mut state = PoolState::new(n, initial_labeled)?;
    let mut known = vec![0usize; n];
    for &i in initial_labeled {
        known[i] = oracle.reveal(i);
    }
    let out = sel.loss.output_width(num_classes);
    let mut params = ModelParams::init(model, pool_x.cols(), out, init_seed(sel.seed));
    let mut train_rng = training_rng(sel.seed);
    let mut acq_rng = SeededRng::new(sel.seed).child(2);

    let mut train = |params: &ModelParams, labeled: &[usize], known: &[usize]| -> Result<ModelParams> {
        let mut rows = labeled.to_vec();
        rows.sort_unstable();
        let mut p = params.clone();
        for _ in 0..cfg.epochs_per_round {
            p = sgd_epoch_xy(&p, pool_x, known, &rows, sel.lr, sel.batch_size, sel.loss, &mut train_rng)?;
        }
        Ok(p)
    };

    params = train(&params, state.labeled(), &known)?;
    let mut trace = ActiveTrace::default();
    for round in 1..=cfg.rounds {
        let batch = match acq {
            Acquisition::Glister => glister_acquire(&state, &params, pool_x, val, cfg.batch, sel, &mut acq_rng)?,
            Acquisition::Random => random_acquire(&state, cfg.batch, &mut acq_rng)?,
            Acquisition::Fass { filter_mult } => fass_acquire(&state, &params, pool_x, cfg.batch, filter_mult)?,
        };
        state.acquire(&batch)?;
        for &i in &batch {
            known[i] = oracle.reveal(i);
        }
        params = train(&params, state.labeled(), &known)?;
        trace.records.push(ActiveRecord {
            round,
            labeled_count: state.labeled().len(),
            val_loss: loss_value(&params, val.features(), val.labels(), sel.loss)?,
            test_acc: accuracy(&params, test)?,
            batch_digest: subset_digest(&batch),
        });
    }
    Ok(ActiveOutcome { params, state, trace })
}

/// [`active_learning`] with GLISTER acquisition and labels from `pool`.
pub fn glister_active(
    pool: &Dataset,
    val: &Dataset,
    test: &Dataset,
    initial_labeled: &[usize],
    model: ModelSpec,
    cfg: &ActiveConfig,
) -> Result<ActiveOutcome> {
    run_active(pool, val, test, initial_labeled, model, cfg, Acquisition::Glister)
}

/// [`active_learning`] with labels from `pool`.
pub fn run_active(
    pool: &Dataset,
    val: &Dataset,
    test: &Dataset,
    initial_labeled: &[usize],
    model: ModelSpec,
    cfg: &ActiveConfig,
    acq: Acquisition,
) -> Result<ActiveOutcome> {
    let mut oracle = DatasetOracle(pool);
    active_learning(pool.features(), pool.num_classes(), &mut oracle, val, test, initial_labeled, model, cfg, acq)
}
