//! Closed-form set functions equal to the last-layer lookahead objective
//! `LL_V(theta_S)` whenever `|S| = K`, rewritten so their structure is
//! visible: concave-of-modular for the margin losses, modular minus a
//! non-negative quadratic for squared loss, and log-sum-exp of shifted
//! modular sums for cross-entropy.
//!
//! All shifts trade `|S|` for the fixed budget `K`, so off-budget values
//! differ from the lookahead objective by design.

use crate::error::{invalid, Result};
use crate::models::LossKind;
use crate::numerics::{dot, log_sum_exp, softplus, DenseMatrix};
use crate::submodular::{GainCursor, SetFunction};

use super::gain::SelectionContext;

/// Size guard for the dense `|V| x n x C` tables.
const MAX_TABLE: usize = 50_000_000;

#[derive(Debug, Clone)]
pub struct ProxyObjective {
    kind: LossKind,
    nv: usize,
    n: usize,
    /// Entries per validation row in `gp` (classes for cross-entropy).
    width: usize,
    /// Margin: inner offset per validation row. Cross-entropy: constant
    /// per row.
    base: Vec<f64>,
    /// Cross-entropy logits `a_ik`, `nv x width`.
    logits: Vec<f64>,
    /// Cross-entropy linear part, element-major `n x nv`.
    lin: Vec<f64>,
    /// Shifted pair terms, element-major `n x nv x width`.
    gp: Vec<f64>,
    /// Squared loss: modular weights, shifted quadratic and constant.
    modular: Vec<f64>,
    pair: Option<DenseMatrix>,
    constant: f64,
}

/// `x~_i^T`-contraction of a last-layer gradient row for output `o`.
#[inline]
fn apply(row: &[f64], out: usize, h: &[f64], o: usize) -> f64 {
    let hw = h.len();
    dot(&row[o * hw..(o + 1) * hw], h) + row[out * hw + o]
}

/// Builds the proxy for the context's loss with step `alpha` and budget
/// `budget`.
pub fn proxy_objective(ctx: &SelectionContext, alpha: f64, budget: usize) -> Result<ProxyObjective> {
    let hv = ctx.val_hidden();
    let yv = ctx.val_labels();
    let (nv, n, out) = (hv.rows(), ctx.len(), ctx.outputs());
    if nv * n * out > MAX_TABLE {
        return Err(invalid("proxy tables too large; use a smaller candidate or validation set"));
    }
    let kf = budget as f64;
    let theta = ctx.theta();
    let grads = ctx.grads();
    let logit = |i: usize, o: usize| apply(theta, out, hv.row(i), o);
    let empty = ProxyObjective {
        kind: ctx.kind(),
        nv,
        n,
        width: 1,
        base: Vec::new(),
        logits: Vec::new(),
        lin: Vec::new(),
        gp: Vec::new(),
        modular: Vec::new(),
        pair: None,
        constant: 0.0,
    };
    match ctx.kind() {
        LossKind::Logistic | LossKind::Hinge | LossKind::Perceptron => {
            let sign = |i: usize| if yv[i] == 1 { 1.0 } else { -1.0 };
            // g_ij = -y_i x~_i^T g_j
            let mut g = vec![0.0; n * nv];
            for j in 0..n {
                for i in 0..nv {
                    g[j * nv + i] = -sign(i) * apply(grads.row(j), 1, hv.row(i), 0);
                }
            }
            let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
            let gmin = if gmin.is_finite() { gmin } else { 0.0 };
            let gp = g.iter().map(|v| alpha * (v - gmin)).collect();
            let base = (0..nv)
                .map(|i| {
                    let m = sign(i) * logit(i, 0);
                    match ctx.kind() {
                        LossKind::Logistic => -m - alpha * kf * gmin,
                        LossKind::Hinge => -1.0 + m + alpha * kf * gmin,
                        _ => m + alpha * kf * gmin,
                    }
                })
                .collect();
            Ok(ProxyObjective { base, gp, ..empty })
        }
        LossKind::Squared => {
            let target = |i: usize, o: usize| {
                if out == 1 {
                    if yv[i] == 1 {
                        1.0
                    } else {
                        -1.0
                    }
                } else if yv[i] == o {
                    1.0
                } else {
                    0.0
                }
            };
            // P_ij = G_j x~_i, element-major n x nv x out
            let mut p = vec![0.0; n * nv * out];
            for j in 0..n {
                for i in 0..nv {
                    for o in 0..out {
                        p[(j * nv + i) * out + o] = apply(grads.row(j), out, hv.row(i), o);
                    }
                }
            }
            let r0: Vec<f64> = (0..nv).flat_map(|i| (0..out).map(move |o| (i, o))).map(|(i, o)| logit(i, o) - target(i, o)).collect();
            let modular = (0..n).map(|j| 2.0 * alpha * dot(&r0, &p[j * nv * out..(j + 1) * nv * out])).collect();
            let mut s = DenseMatrix::zeros(n, n);
            for j in 0..n {
                for k in j..n {
                    let v = dot(&p[j * nv * out..(j + 1) * nv * out], &p[k * nv * out..(k + 1) * nv * out]);
                    s.set(j, k, v);
                    s.set(k, j, v);
                }
            }
            let smin = s.data().iter().copied().fold(f64::INFINITY, f64::min);
            let smin = if smin.is_finite() { smin } else { 0.0 };
            s.data_mut().iter_mut().for_each(|v| *v = alpha * alpha * (*v - smin));
            let constant = -dot(&r0, &r0) - alpha * alpha * kf * kf * smin;
            Ok(ProxyObjective { width: out, modular, pair: Some(s), constant, ..empty })
        }
        LossKind::CrossEntropy => {
            let ht = ctx.train_hidden();
            // g_ijk = (p_jk - [k = y_j]) (x~_j . x~_i); the bias block of a
            // gradient row holds p_j - onehot(y_j)
            let hw = ht.cols();
            let mut g = vec![0.0; n * nv * out];
            for j in 0..n {
                let c = &grads.row(j)[out * hw..];
                for i in 0..nv {
                    let kij = dot(ht.row(j), hv.row(i)) + 1.0;
                    for k in 0..out {
                        g[(j * nv + i) * out + k] = c[k] * kij;
                    }
                }
            }
            let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
            let gmin = if gmin.is_finite() { gmin } else { 0.0 };
            let neg_own = |j: usize, i: usize| -g[(j * nv + i) * out + yv[i]];
            let mut gneg = f64::INFINITY;
            for j in 0..n {
                for i in 0..nv {
                    gneg = gneg.min(neg_own(j, i));
                }
            }
            let gneg = if gneg.is_finite() { gneg } else { 0.0 };
            let mut lin = vec![0.0; n * nv];
            for j in 0..n {
                for i in 0..nv {
                    lin[j * nv + i] = alpha * (neg_own(j, i) - gneg);
                }
            }
            let gp = g.iter().map(|v| alpha * (v - gmin + 1.0)).collect();
            let logits: Vec<f64> = (0..nv).flat_map(|i| (0..out).map(move |o| (i, o))).map(|(i, o)| logit(i, o)).collect();
            let base = (0..nv)
                .map(|i| logits[i * out + yv[i]] + alpha * kf * (gneg + gmin - 1.0))
                .collect();
            Ok(ProxyObjective { width: out, base, logits, lin, gp, ..empty })
        }
    }
}

impl ProxyObjective {
    pub fn kind(&self) -> LossKind {
        self.kind
    }

    fn state_len(&self) -> usize {
        match self.kind {
            LossKind::Squared => self.n,
            _ => self.nv * self.width,
        }
    }

    /// Sum of per-row terms for accumulated sums `acc` (and `lin_acc` for
    /// cross-entropy).
    fn total(&self, acc: &[f64], lin_acc: &[f64]) -> f64 {
        match self.kind {
            LossKind::Logistic => (0..self.nv).map(|i| -softplus(self.base[i] - acc[i])).sum(),
            LossKind::Hinge | LossKind::Perceptron => (0..self.nv).map(|i| (self.base[i] + acc[i]).min(0.0)).sum(),
            LossKind::CrossEntropy => {
                let w = self.width;
                let mut buf = vec![0.0; w];
                (0..self.nv)
                    .map(|i| {
                        for k in 0..w {
                            buf[k] = self.logits[i * w + k] - acc[i * w + k];
                        }
                        self.base[i] + lin_acc[i] - log_sum_exp(&buf).expect("non-empty")
                    })
                    .sum()
            }
            LossKind::Squared => unreachable!("squared loss uses the quadratic form"),
        }
    }
}

impl SetFunction for ProxyObjective {
    fn ground_size(&self) -> usize {
        self.n
    }

    fn value(&self, set: &[usize]) -> f64 {
        let mut c = self.cursor();
        for &e in set {
            c.insert(e);
        }
        c.value()
    }

    fn is_monotone(&self) -> bool {
        self.kind != LossKind::Squared
    }

    fn cursor(&self) -> Box<dyn GainCursor + '_> {
        let acc = vec![0.0; self.state_len()];
        let lin_acc = vec![0.0; if self.kind == LossKind::CrossEntropy { self.nv } else { 0 }];
        let value = match self.kind {
            LossKind::Squared => self.constant,
            _ => self.total(&acc, &lin_acc),
        };
        Box::new(ProxyCursor { f: self, acc, lin_acc, value })
    }
}

struct ProxyCursor<'a> {
    f: &'a ProxyObjective,
    /// Margin and cross-entropy: accumulated shifted sums per validation
    /// entry. Squared: `sum_{j in S} s_hat(e, j)` per element.
    acc: Vec<f64>,
    lin_acc: Vec<f64>,
    value: f64,
}

impl ProxyCursor<'_> {
    fn column(&self, e: usize) -> &[f64] {
        let len = self.f.nv * self.f.width;
        &self.f.gp[e * len..(e + 1) * len]
    }
}

impl GainCursor for ProxyCursor<'_> {
    fn gain(&self, e: usize) -> f64 {
        let f = self.f;
        match f.kind {
            LossKind::Squared => {
                let s = f.pair.as_ref().expect("squared proxy has pair weights");
                f.modular[e] - 2.0 * self.acc[e] - s.get(e, e)
            }
            _ => {
                let acc: Vec<f64> = self.acc.iter().zip(self.column(e)).map(|(a, b)| a + b).collect();
                let lin: Vec<f64> = if f.kind == LossKind::CrossEntropy {
                    self.lin_acc.iter().zip(&f.lin[e * f.nv..(e + 1) * f.nv]).map(|(a, b)| a + b).collect()
                } else {
                    Vec::new()
                };
                f.total(&acc, &lin) - self.value
            }
        }
    }

    fn insert(&mut self, e: usize) {
        let f = self.f;
        match f.kind {
            LossKind::Squared => {
                self.value += self.gain(e);
                let s = f.pair.as_ref().expect("squared proxy has pair weights");
                for (a, v) in self.acc.iter_mut().zip(s.row(e)) {
                    *a += v;
                }
            }
            _ => {
                let len = f.nv * f.width;
                for (a, b) in self.acc.iter_mut().zip(&f.gp[e * len..(e + 1) * len]) {
                    *a += b;
                }
                if f.kind == LossKind::CrossEntropy {
                    for (a, b) in self.lin_acc.iter_mut().zip(&f.lin[e * f.nv..(e + 1) * f.nv]) {
                        *a += b;
                    }
                }
                self.value = f.total(&self.acc, &self.lin_acc);
            }
        }
    }

    fn value(&self) -> f64 {
        self.value
    }
}
