//! Post-hoc checks of the descent and convergence conditions on a trace.
//!
//! Constants are estimated from the trace itself: the smoothness `L` as
//! the largest validation-gradient change per parameter change between
//! consecutive selections, `sigma_T` as the largest subset-gradient norm.

use super::online::RunTrace;

/// Validation loss may rise by at most this much before an epoch whose
/// conditions held counts as a violation.
pub const VIOLATION_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Row {
    pub epoch: usize,
    /// `grad L_V . grad L_T(S) >= 0`.
    pub dot_ok: bool,
    /// `lr <= 2 |grad L_V| cos / (L sigma_T)`.
    pub lr_ok: bool,
    pub val_before: f64,
    pub val_after: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Report {
    pub rows: Vec<Theorem2Row>,
    pub lipschitz_hat: Option<f64>,
    pub sigma_hat: f64,
    pub violations: usize,
}

/// For each selection epoch: whether both descent conditions held and
/// whether the validation loss nonetheless rose over that epoch.
pub fn monitor_theorem2(trace: &RunTrace) -> Theorem2Report {
    let rows: Vec<Theorem2Row> = trace
        .selection_records()
        .map(|(rec, m)| {
            let dot_ok = m.dot_vt >= 0.0;
            let lr_ok = trace.lr <= trace.lr_bound_for(m);
            let violation = dot_ok && lr_ok && rec.val_loss > m.val_loss_before + VIOLATION_TOL;
            Theorem2Row { epoch: rec.epoch, dot_ok, lr_ok, val_before: m.val_loss_before, val_after: rec.val_loss, violation }
        })
        .collect();
    Theorem2Report {
        violations: rows.iter().filter(|r| r.violation).count(),
        rows,
        lipschitz_hat: trace.lipschitz_estimate(),
        sigma_hat: trace.sigma_estimate(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem3Report {
    pub cos_theta: Vec<f64>,
    /// `max_l |theta_l - theta_best|` over selection epochs.
    pub r_hat: f64,
    pub sigma_hat: f64,
    /// `min |grad L_T| / max |grad L_T|` over selection epochs.
    pub delta_hat: f64,
    pub epochs: usize,
    pub first_term: f64,
    pub second_term: f64,
    pub bound: f64,
    /// `min_l L_V(theta_l) - min over all epochs of L_V`.
    pub gap: f64,
}

/// Convergence-bound diagnostic; never asserts anything by itself.
pub fn monitor_theorem3(trace: &RunTrace) -> Theorem3Report {
    let sel: Vec<_> = trace.selection_records().map(|(_, m)| m).collect();
    let epochs = trace.records.len().max(1);
    let cos_theta: Vec<f64> = sel.iter().map(|m| m.cos_theta).collect();
    let sigma_hat = trace.sigma_estimate();
    let min_t = sel.iter().map(|m| m.grad_norm_t).fold(f64::INFINITY, f64::min);
    let delta_hat = if sigma_hat > 0.0 && min_t.is_finite() { min_t / sigma_hat } else { 1.0 };
    let best = sel.iter().min_by(|a, b| a.val_loss_before.total_cmp(&b.val_loss_before));
    let r_hat = best.map_or(0.0, |b| {
        sel.iter()
            .map(|m| m.theta.iter().zip(&b.theta).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    });
    let t = epochs as f64;
    let (first_term, second_term) = if delta_hat > 0.0 {
        let first = r_hat * sigma_hat / (delta_hat * t.sqrt());
        let s: f64 = cos_theta.iter().map(|c| (1.0 - c.clamp(-1.0, 1.0)).sqrt()).sum();
        (first, r_hat * sigma_hat * s / (t * delta_hat))
    } else {
        (0.0, 0.0)
    };
    let min_sel = sel.iter().map(|m| m.val_loss_before).fold(f64::INFINITY, f64::min);
    let min_all = trace
        .records
        .iter()
        .map(|r| r.val_loss)
        .chain(sel.iter().map(|m| m.val_loss_before))
        .fold(f64::INFINITY, f64::min);
    let gap = if min_sel.is_finite() { min_sel - min_all } else { 0.0 };
    Theorem3Report {
        cos_theta,
        r_hat,
        sigma_hat,
        delta_hat,
        epochs,
        first_term,
        second_term,
        bound: first_term + second_term,
        gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glister::online::{EpochRecord, MonitorRecord};

    fn rec(epoch: usize, val: f64, mon: Option<(f64, f64, f64, Vec<f64>, Vec<f64>)>) -> EpochRecord {
        EpochRecord {
            epoch,
            wall_s: 0.0,
            sel_s: 0.0,
            train_loss: 0.0,
            full_train_loss: 0.0,
            val_loss: val,
            test_acc: 0.0,
            subset_digest: String::new(),
            monitor: mon.map(|(dot, cos, before, theta, gv)| MonitorRecord {
                dot_vt: dot,
                cos_theta: cos,
                grad_norm_t: 1.0,
                grad_norm_v: 1.0,
                lr_bound: f64::INFINITY,
                val_loss_before: before,
                theta,
                grad_v: gv,
            }),
        }
    }

    #[test]
    fn clean_trace_has_no_violations() {
        let trace = RunTrace {
            lr: 0.01,
            records: vec![
                rec(0, 9.0, Some((1.0, 1.0, 10.0, vec![0.0], vec![1.0]))),
                rec(1, 8.0, None),
                rec(2, 7.0, Some((0.5, 1.0, 8.0, vec![1.0], vec![0.5]))),
            ],
        };
        let r = monitor_theorem2(&trace);
        assert_eq!(r.violations, 0);
        assert!(r.rows.iter().all(|row| row.dot_ok));
        let t3 = monitor_theorem3(&trace);
        assert_eq!(t3.second_term, 0.0);
        assert!(t3.bound >= 0.0);
    }

    #[test]
    fn negative_dot_is_not_a_violation() {
        let trace = RunTrace {
            lr: 0.01,
            records: vec![rec(0, 12.0, Some((-1.0, -0.5, 10.0, vec![0.0], vec![1.0])))],
        };
        let r = monitor_theorem2(&trace);
        assert!(!r.rows[0].dot_ok);
        assert_eq!(r.violations, 0);
        let t3 = monitor_theorem3(&trace);
        assert!(t3.bound >= 0.0);
    }

    #[test]
    fn rising_loss_under_conditions_is_flagged() {
        let trace = RunTrace {
            lr: 1e-6,
            records: vec![
                rec(0, 11.0, Some((1.0, 1.0, 10.0, vec![0.0], vec![1.0]))),
                rec(1, 10.0, Some((1.0, 1.0, 11.0, vec![1.0], vec![2.0]))),
            ],
        };
        let r = monitor_theorem2(&trace);
        assert_eq!(r.violations, 1);
        assert!(r.rows[0].violation && !r.rows[1].violation);
    }
}
