//! r-round greedy selection over the Taylor gain.

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SeededRng};
use crate::submodular::{
    lazy_greedy, naive_greedy, randomized_greedy, score_all, stochastic_greedy, FacilityLocation, GainCursor,
    SetFunction,
};

use super::gain::{taylor_gain, GainState, SelectionContext};
use super::{GlisterConfig, GreedyKind, Regularizer};

/// Picks per round: `k / r` each, the remainder on the last round.
pub fn round_sizes(k: usize, r: usize) -> Result<Vec<usize>> {
    if r == 0 || k / r == 0 {
        return Err(Error::RoundsTooLarge { r, k });
    }
    let base = k / r;
    let mut sizes = vec![base; r];
    sizes[r - 1] = k - base * (r - 1);
    Ok(sizes)
}

/// Additive regularizer state; cloned per round so round objectives can
/// explore without committing.
#[derive(Clone)]
enum RegState<'a> {
    None,
    Facility { f: &'a FacilityLocation, cover: Vec<f64> },
    Dispersion { x: &'a DenseMatrix, cross: Vec<f64> },
}

impl RegState<'_> {
    fn gain(&self, e: usize) -> f64 {
        match self {
            RegState::None => 0.0,
            RegState::Facility { f, cover } => {
                f.similarity_t().row(e).iter().zip(cover).map(|(&w, &c)| (w - c).max(0.0)).sum()
            }
            RegState::Dispersion { cross, .. } => cross[e],
        }
    }

    fn insert(&mut self, e: usize) {
        match self {
            RegState::None => {}
            RegState::Facility { f, cover } => {
                for (&w, c) in f.similarity_t().row(e).iter().zip(cover.iter_mut()) {
                    *c = c.max(w);
                }
            }
            RegState::Dispersion { x, cross } => {
                let xe = x.row(e);
                for (j, c) in cross.iter_mut().enumerate() {
                    *c += dist(x.row(j), xe);
                }
            }
        }
    }

    fn is_submodular(&self) -> bool {
        !matches!(self, RegState::Dispersion { .. })
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// One round's objective over the local positions of `cands`: stale
/// modular scores plus the weighted regularizer marginal.
struct RoundObjective<'a> {
    cands: &'a [usize],
    scores: &'a [f64],
    lambda: f64,
    reg: &'a RegState<'a>,
}

struct RoundCursor<'a> {
    obj: &'a RoundObjective<'a>,
    reg: RegState<'a>,
    value: f64,
}

impl GainCursor for RoundCursor<'_> {
    fn gain(&self, l: usize) -> f64 {
        let mut g = self.obj.scores[l];
        if self.obj.lambda != 0.0 {
            g += self.obj.lambda * self.reg.gain(self.obj.cands[l]);
        }
        g
    }

    fn insert(&mut self, l: usize) {
        self.value += self.gain(l);
        self.reg.insert(self.obj.cands[l]);
    }

    fn value(&self) -> f64 {
        self.value
    }
}

impl SetFunction for RoundObjective<'_> {
    fn ground_size(&self) -> usize {
        self.cands.len()
    }

    fn value(&self, set: &[usize]) -> f64 {
        let mut c = self.cursor();
        for &l in set {
            c.insert(l);
        }
        c.value()
    }

    fn cursor(&self) -> Box<dyn GainCursor + '_> {
        Box::new(RoundCursor { obj: self, reg: self.reg.clone(), value: 0.0 })
    }
}

/// Top `m` positions by `(score, -index)`.
fn top_m(cands: &[usize], scores: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(cands[a].cmp(&cands[b])));
    order.truncate(m);
    order
}

/// Greedy selection of `cfg.k` candidates from `ctx` in `cfg.rounds`
/// rounds. Each round refreshes the exact validation gradient at the
/// current lookahead, scores the remaining candidates once, picks its
/// share with `cfg.greedy`, then folds the picks into the lookahead.
/// Returns indices in selection order.
pub fn greedy_dss(ctx: &SelectionContext, cfg: &GlisterConfig, rng: &mut SeededRng) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n = ctx.len();
    if cfg.k > n {
        return Err(Error::InvalidArgument(format!("k = {} exceeds {n} candidates", cfg.k)));
    }
    let lambda = cfg.effective_lambda();
    let k_gain = match cfg.regularizer {
        Regularizer::Random => (lambda * cfg.k as f64).round() as usize,
        _ => cfg.k,
    };
    let mut picked = if k_gain > 0 { gain_rounds(ctx, cfg, k_gain, rng)? } else { Vec::new() };
    if k_gain < cfg.k {
        let mut taken = vec![false; n];
        for &e in &picked {
            taken[e] = true;
        }
        let rest: Vec<usize> = (0..n).filter(|&e| !taken[e]).collect();
        picked.extend(rng.sample_from(&rest, cfg.k - k_gain));
    }
    Ok(picked)
}

fn gain_rounds(ctx: &SelectionContext, cfg: &GlisterConfig, k: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    let sizes = round_sizes(k, cfg.rounds)?;
    let n = ctx.len();
    let lambda = match cfg.regularizer {
        Regularizer::FacilityLocation | Regularizer::Diversity => cfg.lambda,
        _ => 0.0,
    };
    let facility;
    let mut reg = match cfg.regularizer {
        Regularizer::FacilityLocation if lambda != 0.0 => {
            facility = FacilityLocation::new(ctx.train_features(), None)?;
            RegState::Facility { f: &facility, cover: vec![0.0; n] }
        }
        Regularizer::Diversity if lambda != 0.0 => {
            RegState::Dispersion { x: ctx.train_features(), cross: vec![0.0; n] }
        }
        _ => RegState::None,
    };

    let mut state = GainState::new(ctx, cfg.eta)?;
    let mut taken = vec![false; n];
    for (round, &m) in sizes.iter().enumerate() {
        if round > 0 {
            state.refresh()?;
        }
        let cands: Vec<usize> = (0..n).filter(|&e| !taken[e]).collect();
        let scores = score_all(&cands, |e| taylor_gain(&state, e));
        let local = match (&reg, cfg.greedy) {
            (RegState::None, GreedyKind::Naive | GreedyKind::Lazy) => top_m(&cands, &scores, m),
            _ => {
                let obj = RoundObjective { cands: &cands, scores: &scores, lambda, reg: &reg };
                match cfg.greedy {
                    GreedyKind::Naive => naive_greedy(&obj, m, None)?,
                    GreedyKind::Lazy if reg.is_submodular() => lazy_greedy(&obj, m, None)?,
                    // dispersion gains grow with the set, so stale bounds are invalid
                    GreedyKind::Lazy => naive_greedy(&obj, m, None)?,
                    GreedyKind::Stochastic => stochastic_greedy(&obj, m, cfg.epsilon, rng, None)?,
                    GreedyKind::Randomized => randomized_greedy(&obj, m, rng, None)?,
                }
            }
        };
        for l in local {
            let e = cands[l];
            taken[e] = true;
            state.fold(e);
            reg.insert(e);
        }
    }
    debug_assert_eq!(state.refresh_count, cfg.rounds);
    Ok(state.selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticKind};
    use crate::glister::gain::exact_gain;
    use crate::models::{sgd_epoch, LossKind, ModelParams, ModelSpec};
    use crate::submodular::exhaustive_max;

    fn context(seed: u64, n_per_class: usize, spec: ModelSpec) -> SelectionContext {
        let train = gen_synthetic(SyntheticKind::Separable2, n_per_class, seed).unwrap().data;
        let val = gen_synthetic(SyntheticKind::Separable2, 10, seed + 500).unwrap().data;
        let mut p = ModelParams::init(spec, 2, 2, seed);
        let all: Vec<usize> = (0..train.len()).collect();
        let mut rng = SeededRng::new(seed);
        p = sgd_epoch(&p, &train, &all, 0.01, 10, LossKind::CrossEntropy, &mut rng).unwrap();
        SelectionContext::from_datasets(&p, &train, &val, LossKind::CrossEntropy).unwrap()
    }

    fn cfg(k: usize, r: usize, eta: f64) -> GlisterConfig {
        let mut c = GlisterConfig::new(k, LossKind::CrossEntropy, 7);
        c.rounds = r;
        c.eta = eta;
        c
    }

    #[test]
    fn round_size_policy() {
        assert_eq!(round_sizes(10, 3).unwrap(), vec![3, 3, 4]);
        assert_eq!(round_sizes(5, 5).unwrap(), vec![1; 5]);
        assert!(matches!(round_sizes(3, 4), Err(Error::RoundsTooLarge { r: 4, k: 3 })));
        let msg = round_sizes(3, 4).unwrap_err().to_string();
        assert!(msg.contains("r too large for k"));
    }

    #[test]
    fn single_round_is_top_k_by_taylor_gain() {
        let ctx = context(1, 30, ModelSpec::Logistic);
        let c = cfg(8, 1, 0.05);
        let got = greedy_dss(&ctx, &c, &mut SeededRng::new(0)).unwrap();
        let st = GainState::new(&ctx, 0.05).unwrap();
        let all: Vec<usize> = (0..ctx.len()).collect();
        let scores: Vec<f64> = all.iter().map(|&e| taylor_gain(&st, e)).collect();
        let want: Vec<usize> = top_m(&all, &scores, 8).into_iter().map(|l| all[l]).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn budget_and_determinism() {
        let ctx = context(2, 40, ModelSpec::Mlp { hidden: 10 });
        for (r, greedy) in [(1, GreedyKind::Naive), (3, GreedyKind::Lazy), (5, GreedyKind::Stochastic), (10, GreedyKind::Randomized)] {
            let mut c = cfg(10, r, 0.05);
            c.greedy = greedy;
            let a = greedy_dss(&ctx, &c, &mut SeededRng::new(3)).unwrap();
            let b = greedy_dss(&ctx, &c, &mut SeededRng::new(3)).unwrap();
            assert_eq!(a, b);
            let mut s = a.clone();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), 10);
        }
        assert!(matches!(
            greedy_dss(&ctx, &cfg(3, 4, 0.05), &mut SeededRng::new(0)),
            Err(Error::RoundsTooLarge { .. })
        ));
    }

    #[test]
    fn regularizers_respect_budget() {
        let ctx = context(3, 30, ModelSpec::Logistic);
        for reg in Regularizer::ALL {
            for greedy in GreedyKind::ALL {
                let mut c = cfg(9, 3, 0.05);
                c.regularizer = reg;
                c.lambda = if reg == Regularizer::Random { 0.6 } else { 0.5 };
                c.greedy = greedy;
                let s = greedy_dss(&ctx, &c, &mut SeededRng::new(1)).unwrap();
                let mut u = s.clone();
                u.sort();
                u.dedup();
                assert_eq!(u.len(), 9, "{reg} {greedy}");
            }
        }
    }

    #[test]
    fn random_mixing_share() {
        let ctx = context(4, 30, ModelSpec::Logistic);
        let mut c = cfg(10, 1, 0.05);
        c.regularizer = Regularizer::Random;
        c.lambda = 0.9;
        let s = greedy_dss(&ctx, &c, &mut SeededRng::new(5)).unwrap();
        let mut plain = c.clone();
        plain.regularizer = Regularizer::None;
        plain.k = 9;
        let g = greedy_dss(&ctx, &plain, &mut SeededRng::new(5)).unwrap();
        assert_eq!(&s[..9], &g[..]);
        assert_eq!(s.len(), 10);
        assert!(!g.contains(&s[9]));
    }

    #[test]
    fn lazy_equals_naive_with_facility_regularizer() {
        let ctx = context(5, 25, ModelSpec::Logistic);
        let mut c = cfg(12, 4, 0.05);
        c.regularizer = Regularizer::FacilityLocation;
        c.lambda = 0.01;
        let naive = greedy_dss(&ctx, &c, &mut SeededRng::new(0)).unwrap();
        c.greedy = GreedyKind::Lazy;
        assert_eq!(greedy_dss(&ctx, &c, &mut SeededRng::new(0)).unwrap(), naive);
    }

    struct ExactG<'a> {
        ctx: &'a SelectionContext,
        eta: f64,
    }

    impl SetFunction for ExactG<'_> {
        fn ground_size(&self) -> usize {
            self.ctx.len()
        }
        fn value(&self, set: &[usize]) -> f64 {
            self.ctx.exact_value(set, self.eta).unwrap()
        }
    }

    #[test]
    fn per_element_refresh_ratio_on_small_instances() {
        let bound = 1.0 - (-1.0f64).exp();
        for seed in 0..5 {
            let ctx = context(10 + seed, 6, ModelSpec::Logistic);
            let eta = 0.01;
            let c = cfg(4, 4, eta);
            let s = greedy_dss(&ctx, &c, &mut SeededRng::new(0)).unwrap();
            let f = ExactG { ctx: &ctx, eta };
            let base = f.value(&[]);
            let (_, opt) = exhaustive_max(&f, 4, None).unwrap();
            let got = f.value(&s) - base;
            let opt = opt - base;
            assert!(got >= bound * opt - 1e-12, "seed {seed}: {got} vs {opt}");
            // each pick's exact gain is non-negative when the best candidate helps
            assert!(exact_gain(&ctx, &[], s[0], eta).unwrap() >= 0.0 || opt <= 0.0);
        }
    }
}
