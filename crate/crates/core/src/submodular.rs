//! Set-function oracles and constrained greedy maximizers.
//!
//! Every maximizer breaks ties toward the lowest element index, so serial,
//! parallel, naive and lazy drivers agree exactly on submodular inputs.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::numerics::{dot, pairwise_sq_dists, spd_inverse, sq_dist, DenseMatrix, SeededRng};

/// Candidate pools at least this large are scored on the rayon pool.
const PAR_MIN: usize = 512;

/// Enumeration limit for [`exhaustive_max`].
pub const EXHAUSTIVE_LIMIT: u64 = 2_000_000;

pub const DEFAULT_STOCHASTIC_EPS: f64 = 0.01;

/// A set function over the ground set `0..ground_size()`.
pub trait SetFunction: Sync {
    fn ground_size(&self) -> usize;

    fn value(&self, set: &[usize]) -> f64;

    /// `f(set + e) - f(set)`.
    fn marginal(&self, e: usize, set: &[usize]) -> f64 {
        let mut with = set.to_vec();
        with.push(e);
        self.value(&with) - self.value(set)
    }

    fn is_monotone(&self) -> bool {
        false
    }

    /// Incremental evaluator starting from the empty set.
    fn cursor(&self) -> Box<dyn GainCursor + '_> {
        Box::new(NaiveCursor { f: self, set: Vec::new(), value: self.value(&[]) })
    }
}

/// Incremental state of a growing set.
pub trait GainCursor: Sync {
    /// Marginal gain of `e` w.r.t. the current set.
    fn gain(&self, e: usize) -> f64;
    fn insert(&mut self, e: usize);
    fn value(&self) -> f64;
}

struct NaiveCursor<'a, F: ?Sized> {
    f: &'a F,
    set: Vec<usize>,
    value: f64,
}

impl<F: SetFunction + ?Sized> GainCursor for NaiveCursor<'_, F> {
    fn gain(&self, e: usize) -> f64 {
        self.f.marginal(e, &self.set)
    }

    fn insert(&mut self, e: usize) {
        self.set.push(e);
        self.value = self.f.value(&self.set);
    }

    fn value(&self) -> f64 {
        self.value
    }
}

/// Scores `cands` in order; parallel for large pools, identical output.
pub(crate) fn score_all<G: Fn(usize) -> f64 + Sync>(cands: &[usize], gain: G) -> Vec<f64> {
    if cands.len() >= PAR_MIN {
        cands.par_iter().map(|&e| gain(e)).collect()
    } else {
        cands.iter().map(|&e| gain(e)).collect()
    }
}

/// Position of the best `(gain, -index)` in parallel slices.
fn argmax(cands: &[usize], gains: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (pos, (&e, &g)) in cands.iter().zip(gains).enumerate() {
        match best {
            None => best = Some(pos),
            Some(b) => {
                if better(g, e, gains[b], cands[b]) {
                    best = Some(pos);
                }
            }
        }
    }
    best
}

/// `(g1, e1)` beats `(g2, e2)`: higher gain, then lower index.
#[inline]
pub(crate) fn better(g1: f64, e1: usize, g2: f64, e2: usize) -> bool {
    match g1.total_cmp(&g2) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => e1 < e2,
    }
}

// ---------------------------------------------------------------------------
// Partition matroid

/// Per-class budgets for the ground set, with each element's class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatroidQuota {
    quotas: Vec<usize>,
    classes: Vec<usize>,
}

impl MatroidQuota {
    pub fn new(quotas: Vec<usize>, classes: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = classes.iter().find(|&&c| c >= quotas.len()) {
            return Err(invalid(format!("element class {bad} has no quota")));
        }
        Ok(Self { quotas, classes })
    }

    /// Largest-remainder apportionment of `k` over `counts`; ties in the
    /// remainder go to the lower class id.
    pub fn apportion(k: usize, counts: &[usize]) -> Result<Vec<usize>> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(invalid("cannot apportion over an empty reference"));
        }
        let mut quotas = Vec::with_capacity(counts.len());
        let mut rems = Vec::with_capacity(counts.len());
        for (c, &n) in counts.iter().enumerate() {
            let num = k as u128 * n as u128;
            quotas.push((num / total as u128) as usize);
            rems.push((num % total as u128, c));
        }
        let short = k - quotas.iter().sum::<usize>();
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, c) in rems.iter().take(short) {
            quotas[c] += 1;
        }
        Ok(quotas)
    }

    /// Quotas following `reference` class proportions, applied to a ground
    /// set with labels `ground_labels`.
    pub fn proportional(k: usize, reference: &Dataset, ground_labels: &[usize]) -> Result<Self> {
        let quotas = Self::apportion(k, &reference.class_counts())?;
        Self::new(quotas, ground_labels.to_vec())
    }

    pub fn quotas(&self) -> &[usize] {
        &self.quotas
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn total(&self) -> usize {
        self.quotas.iter().sum()
    }

    pub fn satisfied_by(&self, set: &[usize]) -> bool {
        let mut counts = vec![0usize; self.quotas.len()];
        for &e in set {
            counts[self.classes[e]] += 1;
        }
        counts == self.quotas
    }

    fn check(&self, n: usize, k: usize) -> Result<()> {
        if self.classes.len() != n {
            return Err(Error::Shape(format!("quota covers {} elements, ground set has {n}", self.classes.len())));
        }
        if self.total() != k {
            return Err(invalid(format!("quotas sum to {} but k = {k}", self.total())));
        }
        let mut avail = vec![0usize; self.quotas.len()];
        for &c in &self.classes {
            avail[c] += 1;
        }
        for (c, (&q, &a)) in self.quotas.iter().zip(&avail).enumerate() {
            if q > a {
                return Err(Error::Infeasible(format!("class {c} needs {q} elements, only {a} exist")));
            }
        }
        Ok(())
    }
}

/// Tracks which elements remain feasible as a set grows.
struct Feasibility<'a> {
    quota: Option<&'a MatroidQuota>,
    used: Vec<usize>,
    taken: Vec<bool>,
}

impl<'a> Feasibility<'a> {
    fn new(n: usize, k: usize, quota: Option<&'a MatroidQuota>) -> Result<Self> {
        if k > n {
            return Err(invalid(format!("k = {k} exceeds ground set size {n}")));
        }
        if let Some(q) = quota {
            q.check(n, k)?;
        }
        Ok(Self { quota, used: vec![0; quota.map_or(0, |q| q.quotas.len())], taken: vec![false; n] })
    }

    fn ok(&self, e: usize) -> bool {
        !self.taken[e]
            && self.quota.is_none_or(|q| self.used[q.classes[e]] < q.quotas[q.classes[e]])
    }

    fn take(&mut self, e: usize) {
        self.taken[e] = true;
        if let Some(q) = self.quota {
            self.used[q.classes[e]] += 1;
        }
    }

    fn candidates(&self) -> Vec<usize> {
        (0..self.taken.len()).filter(|&e| self.ok(e)).collect()
    }
}

fn exhausted() -> Error {
    Error::Infeasible("no feasible element left".into())
}

// ---------------------------------------------------------------------------
// Greedy drivers

/// Adds the feasible element of maximum marginal gain `k` times. Returns
/// elements in selection order.
pub fn naive_greedy(f: &dyn SetFunction, k: usize, quota: Option<&MatroidQuota>) -> Result<Vec<usize>> {
    let mut feas = Feasibility::new(f.ground_size(), k, quota)?;
    let mut cur = f.cursor();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let cands = feas.candidates();
        let gains = score_all(&cands, |e| cur.gain(e));
        let e = cands[argmax(&cands, &gains).ok_or_else(exhausted)?];
        cur.insert(e);
        feas.take(e);
        out.push(e);
    }
    Ok(out)
}

#[derive(Clone, Copy)]
struct HeapEntry {
    bound: f64,
    e: usize,
    stamp: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then(other.e.cmp(&self.e))
    }
}

/// Accelerated greedy with stale upper bounds. An entry is fresh when it
/// was evaluated against the current set; the top entry is accepted only
/// when fresh. Output equals [`naive_greedy`] for submodular `f`.
pub fn lazy_greedy(f: &dyn SetFunction, k: usize, quota: Option<&MatroidQuota>) -> Result<Vec<usize>> {
    let n = f.ground_size();
    let mut feas = Feasibility::new(n, k, quota)?;
    let mut cur = f.cursor();
    let mut out = Vec::with_capacity(k);
    if k == 0 {
        return Ok(out);
    }
    let all: Vec<usize> = (0..n).collect();
    let first = score_all(&all, |e| cur.gain(e));
    let mut heap: BinaryHeap<HeapEntry> =
        all.iter().zip(first).map(|(&e, bound)| HeapEntry { bound, e, stamp: 0 }).collect();
    while out.len() < k {
        let top = heap.pop().ok_or_else(exhausted)?;
        if !feas.ok(top.e) {
            continue;
        }
        if top.stamp == out.len() {
            cur.insert(top.e);
            feas.take(top.e);
            out.push(top.e);
        } else {
            heap.push(HeapEntry { bound: cur.gain(top.e), e: top.e, stamp: out.len() });
        }
    }
    Ok(out)
}

/// Sample size used by [`stochastic_greedy`] before capping at the number
/// of feasible candidates.
pub fn stochastic_sample_size(n: usize, k: usize, eps: f64) -> usize {
    if k == 0 {
        return 0;
    }
    ((n as f64 / k as f64) * (1.0 / eps).ln()).ceil() as usize
}

/// Each step scores a uniform sample of the feasible candidates and adds
/// the best one.
pub fn stochastic_greedy(
    f: &dyn SetFunction,
    k: usize,
    eps: f64,
    rng: &mut SeededRng,
    quota: Option<&MatroidQuota>,
) -> Result<Vec<usize>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    let n = f.ground_size();
    let mut feas = Feasibility::new(n, k, quota)?;
    let s = stochastic_sample_size(n, k, eps);
    let mut cur = f.cursor();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let pool = feas.candidates();
        if pool.is_empty() {
            return Err(exhausted());
        }
        let mut cands = if s >= pool.len() { pool } else { rng.sample_from(&pool, s) };
        cands.sort_unstable();
        let gains = score_all(&cands, |e| cur.gain(e));
        let e = cands[argmax(&cands, &gains).expect("non-empty")];
        cur.insert(e);
        feas.take(e);
        out.push(e);
    }
    Ok(out)
}

/// Each step picks uniformly among the `k` feasible elements with the
/// largest marginal gains (fewer if fewer remain). Always returns exactly
/// `k` elements, negative gains included.
pub fn randomized_greedy(
    f: &dyn SetFunction,
    k: usize,
    rng: &mut SeededRng,
    quota: Option<&MatroidQuota>,
) -> Result<Vec<usize>> {
    let mut feas = Feasibility::new(f.ground_size(), k, quota)?;
    let mut cur = f.cursor();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let cands = feas.candidates();
        if cands.is_empty() {
            return Err(exhausted());
        }
        let gains = score_all(&cands, |e| cur.gain(e));
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(cands[a].cmp(&cands[b])));
        let top = k.min(order.len());
        let e = cands[order[rng.below(top)]];
        cur.insert(e);
        feas.take(e);
        out.push(e);
    }
    Ok(out)
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

/// True maximum by enumeration of all `k`-subsets in lexicographic order;
/// the first maximizer wins ties.
pub fn exhaustive_max(
    f: &dyn SetFunction,
    k: usize,
    quota: Option<&MatroidQuota>,
) -> Result<(Vec<usize>, f64)> {
    let n = f.ground_size();
    if k > n {
        return Err(invalid(format!("k = {k} exceeds ground set size {n}")));
    }
    if binomial(n, k) > EXHAUSTIVE_LIMIT as u128 {
        return Err(Error::BudgetExceeded { n, k, limit: EXHAUSTIVE_LIMIT });
    }
    if let Some(q) = quota {
        q.check(n, k)?;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        if quota.is_none_or(|q| q.satisfied_by(&idx)) {
            let v = f.value(&idx);
            if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                best = Some((idx.clone(), v));
            }
        }
        // advance to the next combination
        let mut i = k;
        loop {
            if i == 0 {
                return best.ok_or_else(|| Error::Infeasible("no subset satisfies the quota".into()));
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Oracles

/// `f(S) = sum_i w_i` over `i in S`.
#[derive(Debug, Clone)]
pub struct Modular {
    pub weights: Vec<f64>,
}

impl SetFunction for Modular {
    fn ground_size(&self) -> usize {
        self.weights.len()
    }

    fn value(&self, set: &[usize]) -> f64 {
        set.iter().map(|&e| self.weights[e]).sum()
    }

    fn marginal(&self, e: usize, _set: &[usize]) -> f64 {
        self.weights[e]
    }

    fn is_monotone(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0)
    }
}

/// Coverage `sum_i max_{s in S} w(i, s)` of reference rows `i` by ground
/// elements `s`, with `max` over an empty set taken as 0.
#[derive(Debug, Clone)]
pub struct FacilityLocation {
    /// `reference x ground`, entries non-negative.
    sim: DenseMatrix,
    /// `ground x reference`, for contiguous gain evaluation.
    sim_t: DenseMatrix,
}

impl FacilityLocation {
    /// From an explicit non-negative similarity matrix (`reference x ground`).
    pub fn from_similarity(sim: DenseMatrix) -> Result<Self> {
        if sim.data().iter().any(|&v| v < 0.0) {
            return Err(invalid("facility location needs non-negative similarities"));
        }
        Ok(Self::wrap(sim))
    }

    fn wrap(sim: DenseMatrix) -> Self {
        let sim_t = sim.transpose();
        Self { sim, sim_t }
    }

    /// Plain or per-class facility location of a point set over itself with
    /// `w(i, j) = d_max - |x_i - x_j|^2`.
    pub fn new(features: &DenseMatrix, labels: Option<&[usize]>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(invalid("facility location needs at least one row"));
        }
        let d = pairwise_sq_dists(features)?;
        let dmax = d.data().iter().copied().fold(0.0, f64::max);
        let n = features.rows();
        let mut sim = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if labels.is_none_or(|l| l[i] == l[j]) {
                    sim.set(i, j, dmax - d.get(i, j));
                }
            }
        }
        Ok(Self::wrap(sim))
    }

    /// Coverage of `reference` rows by `ground` rows. With labels, only
    /// same-class pairs count. `d_max` is the largest cross distance.
    pub fn between(
        reference: &DenseMatrix,
        ground: &DenseMatrix,
        labels: Option<(&[usize], &[usize])>,
    ) -> Result<Self> {
        if reference.rows() == 0 || ground.rows() == 0 {
            return Err(invalid("facility location needs non-empty point sets"));
        }
        if reference.cols() != ground.cols() {
            return Err(Error::Shape("reference and ground dimensions differ".into()));
        }
        let (m, n) = (reference.rows(), ground.rows());
        let mut d = DenseMatrix::zeros(m, n);
        let mut dmax: f64 = 0.0;
        for i in 0..m {
            for j in 0..n {
                let v = sq_dist(reference.row(i), ground.row(j));
                d.set(i, j, v);
                dmax = dmax.max(v);
            }
        }
        let mut sim = DenseMatrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                if labels.is_none_or(|(r, g)| r[i] == g[j]) {
                    sim.set(i, j, dmax - d.get(i, j));
                }
            }
        }
        Ok(Self::wrap(sim))
    }

    pub fn similarity(&self) -> &DenseMatrix {
        &self.sim
    }

    /// Transposed similarity, `ground x reference`.
    pub fn similarity_t(&self) -> &DenseMatrix {
        &self.sim_t
    }
}

impl SetFunction for FacilityLocation {
    fn ground_size(&self) -> usize {
        self.sim.cols()
    }

    fn value(&self, set: &[usize]) -> f64 {
        self.sim.row_iter().map(|row| set.iter().map(|&s| row[s]).fold(0.0, f64::max)).sum()
    }

    fn is_monotone(&self) -> bool {
        true
    }

    fn cursor(&self) -> Box<dyn GainCursor + '_> {
        Box::new(FacilityCursor { f: self, cover: vec![0.0; self.sim.rows()], value: 0.0 })
    }
}

struct FacilityCursor<'a> {
    f: &'a FacilityLocation,
    cover: Vec<f64>,
    value: f64,
}

impl GainCursor for FacilityCursor<'_> {
    fn gain(&self, e: usize) -> f64 {
        self.f.sim_t.row(e).iter().zip(&self.cover).map(|(&w, &c)| (w - c).max(0.0)).sum()
    }

    fn insert(&mut self, e: usize) {
        for (&w, c) in self.f.sim_t.row(e).iter().zip(self.cover.iter_mut()) {
            *c = c.max(w);
        }
        self.value = self.cover.iter().sum();
    }

    fn value(&self) -> f64 {
        self.value
    }
}

/// Smoothing for empty `(feature value, class)` counts in [`NbFeature`].
pub const NB_SMOOTH: f64 = 1e-2;

/// `sum_{j, v, y} m_{v,y}(V) * log m_{v,y}(S)` over discretized features,
/// with `log 0` replaced by `log NB_SMOOTH`.
#[derive(Debug, Clone)]
pub struct NbFeature {
    weights: Vec<f64>,
    /// Per ground element: indices into `weights` of its `(j, v, y)` keys.
    keys: Vec<Vec<usize>>,
    base: f64,
}

fn nb_h(count: usize) -> f64 {
    if count == 0 {
        NB_SMOOTH.ln()
    } else {
        (count as f64).ln()
    }
}

impl NbFeature {
    /// `train` and `val` must hold discretized (integer-valued) features.
    pub fn new(train: &Dataset, val: &Dataset) -> Result<Self> {
        if val.is_empty() {
            return Err(invalid("naive-Bayes feature function needs a non-empty validation set"));
        }
        if train.dim() != val.dim() {
            return Err(Error::Shape("train and validation dimensions differ".into()));
        }
        let mut index: HashMap<(usize, i64, usize), usize> = HashMap::new();
        let mut weights = Vec::new();
        for (row, &y) in val.features().row_iter().zip(val.labels()) {
            for (j, &v) in row.iter().enumerate() {
                let key = (j, v.round() as i64, y);
                let id = *index.entry(key).or_insert_with(|| {
                    weights.push(0.0);
                    weights.len() - 1
                });
                weights[id] += 1.0;
            }
        }
        let keys = train
            .features()
            .row_iter()
            .zip(train.labels())
            .map(|(row, &y)| {
                row.iter()
                    .enumerate()
                    .filter_map(|(j, &v)| index.get(&(j, v.round() as i64, y)).copied())
                    .collect()
            })
            .collect();
        let base = weights.iter().sum::<f64>() * NB_SMOOTH.ln();
        Ok(Self { weights, keys, base })
    }

    fn counts(&self, set: &[usize]) -> Vec<usize> {
        let mut c = vec![0usize; self.weights.len()];
        for &e in set {
            for &k in &self.keys[e] {
                c[k] += 1;
            }
        }
        c
    }
}

impl SetFunction for NbFeature {
    fn ground_size(&self) -> usize {
        self.keys.len()
    }

    fn value(&self, set: &[usize]) -> f64 {
        let c = self.counts(set);
        self.weights.iter().zip(&c).map(|(w, &n)| w * nb_h(n)).sum()
    }

    fn is_monotone(&self) -> bool {
        true
    }

    fn cursor(&self) -> Box<dyn GainCursor + '_> {
        Box::new(NbCursor { f: self, counts: vec![0; self.weights.len()], value: self.base })
    }
}

struct NbCursor<'a> {
    f: &'a NbFeature,
    counts: Vec<usize>,
    value: f64,
}

impl GainCursor for NbCursor<'_> {
    fn gain(&self, e: usize) -> f64 {
        // a row may hit the same key twice only if two features share (j, v, y),
        // which cannot happen since j differs
        self.f.keys[e]
            .iter()
            .map(|&k| self.f.weights[k] * (nb_h(self.counts[k] + 1) - nb_h(self.counts[k])))
            .sum()
    }

    fn insert(&mut self, e: usize) {
        self.value += self.gain(e);
        for &k in &self.f.keys[e] {
            self.counts[k] += 1;
        }
    }

    fn value(&self) -> f64 {
        self.value
    }
}

/// Rows with real-valued targets, used by [`LrSubmodular`].
#[derive(Debug, Clone)]
pub struct RegressionSet {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
}

impl RegressionSet {
    pub fn new(x: DenseMatrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Shape(format!("{} rows but {} targets", x.rows(), y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression targets".into()));
        }
        Ok(Self { x, y })
    }
}

pub const KMEANS_ITERS: usize = 25;

/// Seeded k-means++ followed by `iters` Lloyd iterations. Returns the
/// centroids and each row's cluster.
pub fn kmeans(x: &DenseMatrix, m: usize, iters: usize, seed: u64) -> Result<(DenseMatrix, Vec<usize>)> {
    let n = x.rows();
    if m == 0 || m > n {
        return Err(invalid(format!("k-means needs 1 <= m <= n, got m = {m}, n = {n}")));
    }
    let mut rng = SeededRng::new(seed);
    let mut centers = vec![x.row(rng.below(n)).to_vec()];
    let mut d2: Vec<f64> = x.row_iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if t < w {
                    pick = i;
                    break;
                }
                t -= w;
            }
            pick
        } else {
            rng.below(n)
        };
        centers.push(x.row(pick).to_vec());
        for (di, r) in d2.iter_mut().zip(x.row_iter()) {
            *di = di.min(sq_dist(r, centers.last().expect("pushed")));
        }
    }
    let nearest = |r: &[f64], centers: &[Vec<f64>]| {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (c, ctr) in centers.iter().enumerate() {
            let d = sq_dist(r, ctr);
            if d < bd {
                bd = d;
                best = c;
            }
        }
        best
    };
    let mut assign: Vec<usize> = x.row_iter().map(|r| nearest(r, &centers)).collect();
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; x.cols()]; m];
        let mut counts = vec![0usize; m];
        for (r, &a) in x.row_iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..m {
            // an emptied cluster keeps its previous center
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = x.row_iter().map(|r| nearest(r, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok((DenseMatrix::from_rows(&centers)?, assign))
}

/// Modular-plus-negative-graph-cut set function approximating the
/// validation fit of least squares trained on a subset:
/// `F(S) = sum_{i in S} a_i - sum_{i, j in S} s_hat_ij`.
#[derive(Debug, Clone)]
pub struct LrSubmodular {
    modular: Vec<f64>,
    /// Shifted pair weights, `n x n`, non-negative, diagonal included.
    s_hat: DenseMatrix,
    s_min: f64,
}

pub const LR_RIDGE: f64 = 1e-6;

impl LrSubmodular {
    pub fn new(train: &RegressionSet, val: &RegressionSet, m_clusters: usize, seed: u64) -> Result<Self> {
        if train.x.cols() != val.x.cols() {
            return Err(Error::Shape("train and validation dimensions differ".into()));
        }
        let (centers, assign) = kmeans(&train.x, m_clusters, KMEANS_ITERS, seed)?;
        let d = train.x.cols();
        let n = train.x.rows() as f64;
        let mut counts = vec![0usize; m_clusters];
        for &a in &assign {
            counts[a] += 1;
        }
        let mut gram = DenseMatrix::zeros(d, d);
        for (c, ctr) in centers.row_iter().enumerate() {
            let w = counts[c] as f64 / n;
            for a in 0..d {
                for b in 0..d {
                    gram.set(a, b, gram.get(a, b) + w * ctr[a] * ctr[b]);
                }
            }
        }
        let dinv = spd_inverse(&gram, LR_RIDGE)?;
        Self::from_inverse(train, val, &dinv)
    }

    /// Builds the function from a given `D` (the inverse Gram proxy).
    pub fn from_inverse(train: &RegressionSet, val: &RegressionSet, dinv: &DenseMatrix) -> Result<Self> {
        // v = sum_j y_j x_j over validation
        let mut v = vec![0.0; val.x.cols()];
        for (r, &y) in val.x.row_iter().zip(&val.y) {
            for (a, b) in v.iter_mut().zip(r) {
                *a += y * b;
            }
        }
        let dv = dinv.matvec(&v)?;
        let modular: Vec<f64> =
            train.x.row_iter().zip(&train.y).map(|(xi, &yi)| 2.0 * yi * dot(&dv, xi)).collect();
        // z_i = y_i D x_i ; s_ij = z_i^T (X_V^T X_V) z_j
        let z = {
            let mut z = train.x.matmul_t(dinv)?;
            for (i, &y) in train.y.iter().enumerate() {
                z.row_mut(i).iter_mut().for_each(|v| *v *= y);
            }
            z
        };
        let xz = val.x.matmul_t(&z)?; // |V| x n, entry (k, i) = x_k^T z_i
        let s = xz.t_matmul(&xz)?;
        let s_min = s.data().iter().copied().fold(f64::INFINITY, f64::min);
        let mut s_hat = s;
        s_hat.data_mut().iter_mut().for_each(|v| *v = (*v - s_min).max(0.0));
        Ok(Self { modular, s_hat, s_min })
    }

    pub fn modular_weights(&self) -> &[f64] {
        &self.modular
    }

    pub fn pair_weights(&self) -> &DenseMatrix {
        &self.s_hat
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }
}

impl SetFunction for LrSubmodular {
    fn ground_size(&self) -> usize {
        self.modular.len()
    }

    fn value(&self, set: &[usize]) -> f64 {
        let m: f64 = set.iter().map(|&i| self.modular[i]).sum();
        let pair: f64 = set.iter().flat_map(|&i| set.iter().map(move |&j| (i, j))).map(|(i, j)| self.s_hat.get(i, j)).sum();
        m - pair
    }

    fn cursor(&self) -> Box<dyn GainCursor + '_> {
        Box::new(LrCursor { f: self, cross: vec![0.0; self.modular.len()], value: 0.0 })
    }
}

struct LrCursor<'a> {
    f: &'a LrSubmodular,
    /// `sum_{j in S} s_hat(e, j)` for every `e`.
    cross: Vec<f64>,
    value: f64,
}

impl GainCursor for LrCursor<'_> {
    fn gain(&self, e: usize) -> f64 {
        self.f.modular[e] - 2.0 * self.cross[e] - self.f.s_hat.get(e, e)
    }

    fn insert(&mut self, e: usize) {
        self.value += self.gain(e);
        for (c, &s) in self.cross.iter_mut().zip(self.f.s_hat.row(e)) {
            *c += s;
        }
    }

    fn value(&self) -> f64 {
        self.value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EqualWidthBins;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering as AtOrd};

    fn random_points(rng: &mut SeededRng, n: usize, d: usize) -> DenseMatrix {
        DenseMatrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    fn random_subset(rng: &mut SeededRng, n: usize) -> Vec<usize> {
        (0..n).filter(|_| rng.uniform() < 0.4).collect()
    }

    struct Counting<'a> {
        inner: &'a dyn SetFunction,
        calls: AtomicUsize,
    }

    struct CountingCursor<'a> {
        inner: Box<dyn GainCursor + 'a>,
        calls: &'a AtomicUsize,
    }

    impl GainCursor for CountingCursor<'_> {
        fn gain(&self, e: usize) -> f64 {
            self.calls.fetch_add(1, AtOrd::SeqCst);
            self.inner.gain(e)
        }
        fn insert(&mut self, e: usize) {
            self.inner.insert(e)
        }
        fn value(&self) -> f64 {
            self.inner.value()
        }
    }

    impl SetFunction for Counting<'_> {
        fn ground_size(&self) -> usize {
            self.inner.ground_size()
        }
        fn value(&self, set: &[usize]) -> f64 {
            self.inner.value(set)
        }
        fn cursor(&self) -> Box<dyn GainCursor + '_> {
            Box::new(CountingCursor { inner: self.inner.cursor(), calls: &self.calls })
        }
    }

    #[test]
    fn modular_greedy_is_top_k() {
        let f = Modular { weights: vec![0.3, 2.0, -1.0, 5.0, 1.5] };
        assert_eq!(naive_greedy(&f, 3, None).unwrap(), vec![3, 1, 4]);
        assert_eq!(lazy_greedy(&f, 3, None).unwrap(), vec![3, 1, 4]);
    }

    #[test]
    fn k_equals_n_takes_everything() {
        let mut rng = SeededRng::new(1);
        let f = FacilityLocation::new(&random_points(&mut rng, 7, 2), None).unwrap();
        let mut s = naive_greedy(&f, 7, None).unwrap();
        s.sort();
        assert_eq!(s, (0..7).collect::<Vec<_>>());
        assert!(lazy_greedy(&f, 0, None).unwrap().is_empty());
        assert!(naive_greedy(&f, 8, None).is_err());
    }

    #[test]
    fn facility_location_ratio_against_enumeration() {
        let one_minus_inv_e = 1.0 - (-1.0f64).exp();
        for seed in 0..10 {
            let mut rng = SeededRng::new(seed);
            let f = FacilityLocation::new(&random_points(&mut rng, 12, 3), None).unwrap();
            let g = naive_greedy(&f, 4, None).unwrap();
            let (_, opt) = exhaustive_max(&f, 4, None).unwrap();
            assert!(f.value(&g) >= one_minus_inv_e * opt - 1e-12);
            assert!(opt >= f.value(&g) - 1e-12);
        }
    }

    #[test]
    fn lazy_matches_naive_on_fifty_instances() {
        for seed in 0..50 {
            let mut rng = SeededRng::new(100 + seed);
            let n = 20 + rng.below(20);
            let x = random_points(&mut rng, n, 3);
            let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
            let per_class = seed % 2 == 0;
            let f = FacilityLocation::new(&x, per_class.then_some(&labels[..])).unwrap();
            let k = 1 + rng.below(n / 2);
            assert_eq!(naive_greedy(&f, k, None).unwrap(), lazy_greedy(&f, k, None).unwrap());
        }
    }

    #[test]
    fn lazy_modular_evaluation_count() {
        let n = 30;
        let k = 8;
        let f = Modular { weights: (0..n).map(|i| ((i * 37) % n) as f64 + 0.5).collect() };
        let c = Counting { inner: &f, calls: AtomicUsize::new(0) };
        let lazy = lazy_greedy(&c, k, None).unwrap();
        assert_eq!(c.calls.load(AtOrd::SeqCst), n + k - 1);
        assert_eq!(lazy, naive_greedy(&f, k, None).unwrap());
    }

    #[test]
    fn stochastic_covers_ground_set_when_eps_tiny() {
        let mut rng = SeededRng::new(2);
        let f = FacilityLocation::new(&random_points(&mut rng, 15, 2), None).unwrap();
        let naive = naive_greedy(&f, 5, None).unwrap();
        let mut r = SeededRng::new(3);
        assert_eq!(stochastic_greedy(&f, 5, 1e-12, &mut r, None).unwrap(), naive);
    }

    #[test]
    fn stochastic_value_and_determinism() {
        let mut rng = SeededRng::new(4);
        let f = FacilityLocation::new(&random_points(&mut rng, 100, 2), None).unwrap();
        let naive = f.value(&naive_greedy(&f, 10, None).unwrap());
        let mean: f64 = (0..20)
            .map(|s| f.value(&stochastic_greedy(&f, 10, 0.01, &mut SeededRng::new(s), None).unwrap()))
            .sum::<f64>()
            / 20.0;
        assert!(mean >= 0.9 * naive);
        let a = stochastic_greedy(&f, 10, 0.1, &mut SeededRng::new(9), None).unwrap();
        let b = stochastic_greedy(&f, 10, 0.1, &mut SeededRng::new(9), None).unwrap();
        assert_eq!(a, b);
        assert!(stochastic_greedy(&f, 10, 1.0, &mut SeededRng::new(9), None).is_err());
    }

    #[test]
    fn randomized_greedy_contract() {
        let f = Modular { weights: vec![1.0, 4.0, -3.0, -2.0, 0.5] };
        for s in 0..10 {
            let mut rng = SeededRng::new(s);
            assert_eq!(randomized_greedy(&f, 1, &mut rng, None).unwrap(), vec![1]);
            assert_eq!(randomized_greedy(&f, 5, &mut rng, None).unwrap().len(), 5);
        }
    }

    #[test]
    fn randomized_greedy_on_non_monotone_instances() {
        let inv_e = (-1.0f64).exp();
        for inst in 0..5 {
            let mut rng = SeededRng::new(50 + inst);
            let x = random_points(&mut rng, 10, 2);
            let y: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
            let xv = random_points(&mut rng, 8, 2);
            let yv: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let f = LrSubmodular::new(
                &RegressionSet::new(x, y).unwrap(),
                &RegressionSet::new(xv, yv).unwrap(),
                3,
                inst,
            )
            .unwrap();
            let (_, opt) = exhaustive_max(&f, 4, None).unwrap();
            let mean: f64 = (0..50)
                .map(|s| f.value(&randomized_greedy(&f, 4, &mut SeededRng::new(s), None).unwrap()))
                .sum::<f64>()
                / 50.0;
            assert!(opt <= 0.0 || mean >= inv_e * opt, "instance {inst}: {mean} vs {opt}");
        }
    }

    #[test]
    fn exhaustive_examples() {
        let f = Modular { weights: vec![1.0, 2.0, 3.0, 4.0] };
        let (s, v) = exhaustive_max(&f, 2, None).unwrap();
        assert_eq!((s, v), (vec![2, 3], 7.0));

        let q = MatroidQuota::new(vec![1, 1], vec![0, 0, 1, 1]).unwrap();
        let f2 = Modular { weights: vec![5.0, 1.0, 0.5, 2.0] };
        let (s, v) = exhaustive_max(&f2, 2, Some(&q)).unwrap();
        assert_eq!((s, v), (vec![0, 3], 7.0));

        let big = Modular { weights: vec![1.0; 40] };
        assert!(matches!(exhaustive_max(&big, 20, None), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn quota_is_met_and_infeasible_quota_errors() {
        let mut rng = SeededRng::new(5);
        let x = random_points(&mut rng, 20, 2);
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let f = FacilityLocation::new(&x, Some(&labels)).unwrap();
        let q = MatroidQuota::new(vec![2, 3, 1], labels.clone()).unwrap();
        for s in [
            naive_greedy(&f, 6, Some(&q)).unwrap(),
            lazy_greedy(&f, 6, Some(&q)).unwrap(),
            stochastic_greedy(&f, 6, 0.1, &mut rng, Some(&q)).unwrap(),
            randomized_greedy(&f, 6, &mut rng, Some(&q)).unwrap(),
        ] {
            assert!(q.satisfied_by(&s));
        }
        let bad = MatroidQuota::new(vec![8, 0, 0], labels).unwrap();
        assert!(matches!(naive_greedy(&f, 8, Some(&bad)), Err(Error::Infeasible(_))));
    }

    #[test]
    fn apportion_largest_remainder() {
        assert_eq!(MatroidQuota::apportion(10, &[50, 50]).unwrap(), vec![5, 5]);
        assert_eq!(MatroidQuota::apportion(10, &[1, 1, 1]).unwrap(), vec![4, 3, 3]);
        assert_eq!(MatroidQuota::apportion(7, &[10, 20, 70]).unwrap(), vec![1, 1, 5]);
        let q = MatroidQuota::apportion(13, &[3, 9, 1, 27]).unwrap();
        assert_eq!(q.iter().sum::<usize>(), 13);
    }

    #[test]
    fn facility_location_examples() {
        let same = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let f = FacilityLocation::new(&same, None).unwrap();
        assert_eq!(f.value(&[0, 1, 2]), 0.0);

        let two = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let f = FacilityLocation::new(&two, None).unwrap();
        assert_eq!(f.value(&[0]), 25.0);
        assert_eq!(f.value(&[]), 0.0);

        let mut rng = SeededRng::new(6);
        let f = FacilityLocation::new(&random_points(&mut rng, 8, 3), None).unwrap();
        for _ in 0..50 {
            let s = random_subset(&mut rng, 8);
            let e = rng.below(8);
            let mut cur = f.cursor();
            for &x in &s {
                cur.insert(x);
            }
            let mut with = s.clone();
            with.push(e);
            assert!((cur.gain(e) - (f.value(&with) - f.value(&s))).abs() < 1e-9);
            assert!((cur.value() - f.value(&s)).abs() < 1e-9);
        }
    }

    fn discretized_pair(seed: u64, n: usize, m: usize) -> (Dataset, Dataset) {
        let mut rng = SeededRng::new(seed);
        let x = random_points(&mut rng, n, 3);
        let xv = random_points(&mut rng, m, 3);
        let bins = EqualWidthBins::fit(&x, 4).unwrap();
        let tr = Dataset::new(bins.apply(&x).unwrap(), (0..n).map(|_| rng.below(2)).collect(), 2).unwrap();
        let va = Dataset::new(bins.apply(&xv).unwrap(), (0..m).map(|_| rng.below(2)).collect(), 2).unwrap();
        (tr, va)
    }

    #[test]
    fn nb_feature_examples() {
        let (tr, va) = discretized_pair(7, 20, 15);
        let f = NbFeature::new(&tr, &va).unwrap();
        let total_weight = (va.len() * va.dim()) as f64;
        assert!((f.value(&[]) - total_weight * NB_SMOOTH.ln()).abs() < 1e-9);

        let dup = Dataset::new(
            DenseMatrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![1.0, 2.0, 0.0]]).unwrap(),
            vec![0, 0],
            2,
        )
        .unwrap();
        let val = dup.subset(&[0]);
        let f = NbFeature::new(&dup, &val).unwrap();
        assert!(f.marginal(1, &[0]) < f.marginal(1, &[]));

        let empty = va.subset(&[]);
        assert!(NbFeature::new(&tr, &empty).is_err());
    }

    fn check_diminishing(f: &dyn SetFunction, rng: &mut SeededRng, trials: usize) {
        let n = f.ground_size();
        for _ in 0..trials {
            let y = random_subset(rng, n);
            let x: Vec<usize> = y.iter().copied().filter(|_| rng.uniform() < 0.5).collect();
            let outside: Vec<usize> = (0..n).filter(|e| !y.contains(e)).collect();
            if outside.is_empty() {
                continue;
            }
            let e = outside[rng.below(outside.len())];
            let gx = f.marginal(e, &x);
            let gy = f.marginal(e, &y);
            assert!(gx >= gy - 1e-9, "{gx} < {gy}");
            if f.is_monotone() {
                assert!(gy >= -1e-9);
            }
        }
    }

    #[test]
    fn shipped_oracles_have_diminishing_returns() {
        let mut rng = SeededRng::new(8);
        let x = random_points(&mut rng, 15, 2);
        let labels: Vec<usize> = (0..15).map(|i| i % 2).collect();
        check_diminishing(&FacilityLocation::new(&x, None).unwrap(), &mut rng, 100);
        check_diminishing(&FacilityLocation::new(&x, Some(&labels)).unwrap(), &mut rng, 100);
        let (tr, va) = discretized_pair(9, 15, 30);
        check_diminishing(&NbFeature::new(&tr, &va).unwrap(), &mut rng, 100);
        let lr = LrSubmodular::new(
            &RegressionSet::new(random_points(&mut rng, 12, 2), (0..12).map(|_| rng.normal()).collect()).unwrap(),
            &RegressionSet::new(random_points(&mut rng, 6, 2), (0..6).map(|_| rng.normal()).collect()).unwrap(),
            2,
            1,
        )
        .unwrap();
        check_diminishing(&lr, &mut rng, 100);
    }

    #[test]
    fn lr_shift_and_modular_degenerate_case() {
        let mut rng = SeededRng::new(10);
        let f = LrSubmodular::new(
            &RegressionSet::new(random_points(&mut rng, 10, 3), (0..10).map(|_| rng.normal()).collect()).unwrap(),
            &RegressionSet::new(random_points(&mut rng, 5, 3), (0..5).map(|_| rng.normal()).collect()).unwrap(),
            3,
            0,
        )
        .unwrap();
        assert!(f.pair_weights().data().iter().all(|&v| v >= 0.0));

        // validation points orthogonal to every D x_i make every s_ij zero
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.5, 0.0], vec![3.0, 0.0]]).unwrap();
        let tr = RegressionSet::new(x, vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        let va = RegressionSet::new(DenseMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap(), vec![1.0]).unwrap();
        let f = LrSubmodular::from_inverse(&tr, &va, &DenseMatrix::identity(2)).unwrap();
        assert!(f.pair_weights().data().iter().all(|&v| v == 0.0));
        let w = Modular { weights: f.modular_weights().to_vec() };
        assert_eq!(naive_greedy(&f, 2, None).unwrap(), naive_greedy(&w, 2, None).unwrap());
    }

    #[test]
    fn lr_cursor_matches_value() {
        let mut rng = SeededRng::new(11);
        let f = LrSubmodular::new(
            &RegressionSet::new(random_points(&mut rng, 9, 2), (0..9).map(|_| rng.normal()).collect()).unwrap(),
            &RegressionSet::new(random_points(&mut rng, 4, 2), (0..4).map(|_| rng.normal()).collect()).unwrap(),
            2,
            0,
        )
        .unwrap();
        let mut cur = f.cursor();
        let mut s = Vec::new();
        for e in [3, 1, 7, 0] {
            let mut with = s.clone();
            with.push(e);
            assert!((cur.gain(e) - (f.value(&with) - f.value(&s))).abs() < 1e-9);
            cur.insert(e);
            s.push(e);
        }
        assert!((cur.value() - f.value(&s)).abs() < 1e-9);
    }

    #[test]
    fn kmeans_is_seeded() {
        let mut rng = SeededRng::new(12);
        let x = random_points(&mut rng, 40, 2);
        let a = kmeans(&x, 4, KMEANS_ITERS, 3).unwrap();
        let b = kmeans(&x, 4, KMEANS_ITERS, 3).unwrap();
        assert_eq!(a.1, b.1);
        assert!(kmeans(&x, 0, 5, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_lazy_equals_naive(seed in 0u64..10_000, n in 2usize..25, k_frac in 0.0f64..1.0) {
            let mut rng = SeededRng::new(seed);
            let f = FacilityLocation::new(&random_points(&mut rng, n, 2), None).unwrap();
            let k = ((n as f64) * k_frac) as usize;
            prop_assert_eq!(naive_greedy(&f, k, None).unwrap(), lazy_greedy(&f, k, None).unwrap());
        }

        #[test]
        fn prop_quota_exact(seed in 0u64..10_000, n in 6usize..30) {
            let mut rng = SeededRng::new(seed);
            let x = random_points(&mut rng, n, 2);
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let f = FacilityLocation::new(&x, Some(&labels)).unwrap();
            let k = 1 + rng.below(n / 3);
            let quotas = MatroidQuota::apportion(k, &[1, 1, 1]).unwrap();
            let q = MatroidQuota::new(quotas, labels).unwrap();
            let s = lazy_greedy(&f, k, Some(&q)).unwrap();
            prop_assert!(q.satisfied_by(&s));
            prop_assert_eq!(s, naive_greedy(&f, k, Some(&q)).unwrap());
        }

        #[test]
        fn prop_greedy_ratio_small_monotone(seed in 0u64..10_000, n in 4usize..=12) {
            let mut rng = SeededRng::new(seed);
            let f = FacilityLocation::new(&random_points(&mut rng, n, 2), None).unwrap();
            let k = 1 + rng.below(n.min(5));
            let g = f.value(&naive_greedy(&f, k, None).unwrap());
            let (_, opt) = exhaustive_max(&f, k, None).unwrap();
            prop_assert!(g >= (1.0 - (-1.0f64).exp()) * opt - 1e-9);
        }
    }
}
