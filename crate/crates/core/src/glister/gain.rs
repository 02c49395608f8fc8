//! Last-layer lookahead gains.
//!
//! Per-element training gradients `g_e` are taken at the base parameters
//! `theta` and frozen for one selection. The lookahead for a set `S` is
//! `theta_S = theta - eta * sum_{j in S} g_j` (a gradient-ascent step on
//! the training log-likelihood), and the validation log-likelihood is
//! `LL_V = -L_V`.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{
    last_layer_per_sample_grads, loss_and_grad, penultimate, Activation, Layer, LossKind, ModelParams,
    PerSampleGradTable,
};
use crate::numerics::{dot, DenseMatrix};

/// Everything a selection needs, computed once at the base parameters.
#[derive(Debug, Clone)]
pub struct SelectionContext {
    x_train: DenseMatrix,
    h_train: DenseMatrix,
    y_train: Vec<usize>,
    h_val: DenseMatrix,
    y_val: Vec<usize>,
    kind: LossKind,
    out: usize,
    theta: Vec<f64>,
    grads: PerSampleGradTable,
}

impl SelectionContext {
    /// Candidates are the rows of `x_train` with targets `y_train` (true or
    /// hypothesized labels).
    pub fn new(
        params: &ModelParams,
        x_train: &DenseMatrix,
        y_train: &[usize],
        x_val: &DenseMatrix,
        y_val: &[usize],
        kind: LossKind,
    ) -> Result<Self> {
        if x_val.rows() == 0 {
            return Err(Error::InvalidArgument("selection needs a non-empty validation set".into()));
        }
        let grads = last_layer_per_sample_grads(params, x_train, y_train, kind)?;
        let h_train = penultimate(params, x_train)?;
        let h_val = penultimate(params, x_val)?;
        let ctx = Self {
            x_train: x_train.clone(),
            h_train,
            y_train: y_train.to_vec(),
            h_val,
            y_val: y_val.to_vec(),
            kind,
            out: params.output_width(),
            theta: params.last_layer_vec(),
            grads,
        };
        // label checks against the validation set
        ctx.val_loss_grad(&ctx.theta)?;
        Ok(ctx)
    }

    pub fn from_datasets(params: &ModelParams, train: &Dataset, val: &Dataset, kind: LossKind) -> Result<Self> {
        Self::new(params, train.features(), train.labels(), val.features(), val.labels(), kind)
    }

    pub fn len(&self) -> usize {
        self.h_train.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.h_train.rows() == 0
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn outputs(&self) -> usize {
        self.out
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn grads(&self) -> &PerSampleGradTable {
        &self.grads
    }

    pub fn train_features(&self) -> &DenseMatrix {
        &self.x_train
    }

    pub fn train_hidden(&self) -> &DenseMatrix {
        &self.h_train
    }

    pub fn train_targets(&self) -> &[usize] {
        &self.y_train
    }

    pub fn val_hidden(&self) -> &DenseMatrix {
        &self.h_val
    }

    pub fn val_labels(&self) -> &[usize] {
        &self.y_val
    }

    /// Single linear layer from a flattened last-layer vector.
    pub(crate) fn head(&self, w: &[f64]) -> Result<ModelParams> {
        let hw = self.h_val.cols();
        if w.len() != self.out * (hw + 1) {
            return Err(Error::Shape(format!("last-layer vector has {} entries", w.len())));
        }
        let weight = DenseMatrix::from_vec(self.out, hw, w[..self.out * hw].to_vec())?;
        let layer = Layer { weight, bias: w[self.out * hw..].to_vec() };
        ModelParams::from_layers(vec![layer], Activation::Identity)
    }

    /// Summed validation loss and its gradient at last-layer `w`.
    pub fn val_loss_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (loss, g) = loss_and_grad(&self.head(w)?, &self.h_val, &self.y_val, self.kind)?;
        Ok((loss, g.to_vec()))
    }

    /// `LL_V` at last-layer `w`.
    pub fn val_ll(&self, w: &[f64]) -> Result<f64> {
        Ok(-self.val_loss_grad(w)?.0)
    }

    /// `theta - eta * sum_{j in set} g_j`.
    pub fn lookahead(&self, set: &[usize], eta: f64) -> Vec<f64> {
        let mut w = self.theta.clone();
        for &j in set {
            for (a, g) in w.iter_mut().zip(self.grads.row(j)) {
                *a -= eta * g;
            }
        }
        w
    }

    /// `G(S) = LL_V(theta_S)` without any linearization.
    pub fn exact_value(&self, set: &[usize], eta: f64) -> Result<f64> {
        self.val_ll(&self.lookahead(set, eta))
    }
}

/// Full recomputation of `LL_V(theta_{S+e}) - LL_V(theta_S)`.
pub fn exact_gain(ctx: &SelectionContext, set: &[usize], e: usize, eta: f64) -> Result<f64> {
    let mut with = set.to_vec();
    with.push(e);
    Ok(ctx.exact_value(&with, eta)? - ctx.exact_value(set, eta)?)
}

/// Lookahead state of a growing selection.
#[derive(Debug, Clone)]
pub struct GainState<'c> {
    ctx: &'c SelectionContext,
    pub eta: f64,
    pub theta_lookahead: Vec<f64>,
    /// `grad LL_V(theta_S)`, exact as of the last refresh.
    pub val_grad_ll: Vec<f64>,
    pub val_ll: f64,
    pub refresh_count: usize,
    pub selected: Vec<usize>,
}

impl<'c> GainState<'c> {
    /// Starts at `S = {}` with one exact refresh.
    pub fn new(ctx: &'c SelectionContext, eta: f64) -> Result<Self> {
        let mut s = Self {
            ctx,
            eta,
            theta_lookahead: ctx.theta.clone(),
            val_grad_ll: Vec::new(),
            val_ll: 0.0,
            refresh_count: 0,
            selected: Vec::new(),
        };
        s.refresh()?;
        Ok(s)
    }

    pub fn context(&self) -> &'c SelectionContext {
        self.ctx
    }

    /// Exact validation gradient at the current lookahead.
    pub fn refresh(&mut self) -> Result<()> {
        let (loss, g) = self.ctx.val_loss_grad(&self.theta_lookahead)?;
        self.val_ll = -loss;
        self.val_grad_ll = g.into_iter().map(|v| -v).collect();
        self.refresh_count += 1;
        Ok(())
    }

    /// Adds `e` to the selection and moves the lookahead; the validation
    /// gradient goes stale until the next refresh.
    pub fn fold(&mut self, e: usize) {
        for (a, g) in self.theta_lookahead.iter_mut().zip(self.ctx.grads.row(e)) {
            *a -= self.eta * g;
        }
        self.selected.push(e);
    }
}

/// `eta * grad LL_T(e) . grad LL_V(theta_S)`, which with loss gradients
/// `g_e` is `-eta * g_e . grad LL_V`.
pub fn taylor_gain(state: &GainState<'_>, e: usize) -> f64 {
    -state.eta * dot(state.ctx.grads.row(e), &state.val_grad_ll)
}
