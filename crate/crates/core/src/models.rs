//! Small differentiable classifiers: logistic regression and a ReLU MLP,
//! the five loss families, analytic gradients and a plain SGD trainer.
//!
//! Losses are sums over samples, never means. A mini-batch SGD step is
//! therefore `theta -= lr * sum_i grad_i`.

use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::numerics::{log_sum_exp, sigmoid, softplus, DenseMatrix, SeededRng};

pub const DEFAULT_HIDDEN: usize = 100;
pub const DEFAULT_LR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    /// No hidden nonlinearity (logistic regression).
    Identity,
    /// ReLU between layers; the output layer stays linear.
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Layered weights and biases. Also used as the container for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
    activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelSpec {
    Logistic,
    Mlp { hidden: usize },
}

impl ModelSpec {
    pub fn mlp() -> Self {
        ModelSpec::Mlp { hidden: DEFAULT_HIDDEN }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    CrossEntropy,
    Logistic,
    Squared,
    Hinge,
    Perceptron,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::CrossEntropy,
        LossKind::Logistic,
        LossKind::Squared,
        LossKind::Hinge,
        LossKind::Perceptron,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Logistic => "logistic",
            LossKind::Squared => "squared",
            LossKind::Hinge => "hinge",
            LossKind::Perceptron => "perceptron",
        }
    }

    /// Logistic, hinge and perceptron score a single margin `y * f(x)` with
    /// class 1 mapped to `+1` and class 0 to `-1`.
    pub fn is_binary_margin(self) -> bool {
        matches!(self, LossKind::Logistic | LossKind::Hinge | LossKind::Perceptron)
    }

    /// Width of the model output for this loss.
    pub fn output_width(self, num_classes: usize) -> usize {
        if self.is_binary_margin() {
            1
        } else {
            num_classes
        }
    }

    /// Loss of one sample and its derivative w.r.t. the output row.
    pub fn loss_and_output_grad(self, logits: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        match self {
            LossKind::CrossEntropy => {
                let lse = log_sum_exp(logits).expect("non-empty logits");
                for (g, &f) in grad.iter_mut().zip(logits) {
                    *g = (f - lse).exp();
                }
                grad[label] -= 1.0;
                lse - logits[label]
            }
            LossKind::Squared => {
                let mut loss = 0.0;
                if logits.len() == 1 {
                    let r = logits[0] - sign(label);
                    grad[0] = 2.0 * r;
                    loss = r * r;
                } else {
                    for (c, (g, &f)) in grad.iter_mut().zip(logits).enumerate() {
                        let r = f - if c == label { 1.0 } else { 0.0 };
                        *g = 2.0 * r;
                        loss += r * r;
                    }
                }
                loss
            }
            LossKind::Logistic => {
                let s = sign(label);
                let m = s * logits[0];
                grad[0] = -s * sigmoid(-m);
                softplus(-m)
            }
            LossKind::Hinge => {
                let s = sign(label);
                let m = s * logits[0];
                grad[0] = if m < 1.0 { -s } else { 0.0 };
                (1.0 - m).max(0.0)
            }
            LossKind::Perceptron => {
                let s = sign(label);
                let m = s * logits[0];
                grad[0] = if m < 0.0 { -s } else { 0.0 };
                (-m).max(0.0)
            }
        }
    }
}

#[inline]
fn sign(label: usize) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown loss kind {s:?}")))
    }
}

impl ModelParams {
    /// Seeded uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for all
    /// weights and biases.
    pub fn init(spec: ModelSpec, input: usize, output: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let (dims, activation): (Vec<usize>, _) = match spec {
            ModelSpec::Logistic => (vec![input, output], Activation::Identity),
            ModelSpec::Mlp { hidden } => (vec![input, hidden, output], Activation::Relu),
        };
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let weight: Vec<f64> =
                    (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
                let bias = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
                Layer { weight: DenseMatrix::from_vec(fan_out, fan_in, weight).expect("sized"), bias }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("model needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Shape(format!("layer {i}: bias length {} != {}", l.bias.len(), l.fan_out())));
            }
            if i > 0 && layers[i - 1].fan_out() != l.fan_in() {
                return Err(Error::Shape(format!("layer {i} input {} != previous output", l.fan_in())));
            }
            if !l.weight.all_finite() || l.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i}")));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.last().fan_out()
    }

    pub fn last(&self) -> &Layer {
        self.layers.last().expect("non-empty")
    }

    /// Width of the activations feeding the last layer.
    pub fn penultimate_width(&self) -> usize {
        self.last().fan_in()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    /// Zeros shaped like `self`.
    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer { weight: DenseMatrix::zeros(l.fan_out(), l.fan_in()), bias: vec![0.0; l.fan_out()] })
            .collect();
        Self { layers, activation: self.activation }
    }

    /// Flattened: each layer's weights row-major, then its bias.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(l.weight.data());
            v.extend_from_slice(&l.bias);
        }
        v
    }

    /// Inverse of [`ModelParams::to_vec`] using `self` for the shapes.
    pub fn with_vec(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.num_params() {
            return Err(Error::Shape(format!("{} values for {} params", v.len(), self.num_params())));
        }
        let mut out = self.clone();
        let mut off = 0;
        for l in &mut out.layers {
            let w = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&v[off..off + w]);
            off += w;
            let b = l.bias.len();
            l.bias.copy_from_slice(&v[off..off + b]);
            off += b;
        }
        Ok(out)
    }

    /// Last layer flattened the same way: weights row-major, then bias.
    pub fn last_layer_vec(&self) -> Vec<f64> {
        let l = self.last();
        let mut v = l.weight.data().to_vec();
        v.extend_from_slice(&l.bias);
        v
    }

    pub fn with_last_layer_vec(&self, v: &[f64]) -> Result<Self> {
        let l = self.last();
        let w = l.weight.data().len();
        if v.len() != w + l.bias.len() {
            return Err(Error::Shape("last-layer vector length".into()));
        }
        let mut out = self.clone();
        let last = out.layers.last_mut().expect("non-empty");
        last.weight.data_mut().copy_from_slice(&v[..w]);
        last.bias.copy_from_slice(&v[w..]);
        Ok(out)
    }

    /// `self + scale * other`, shapes must match.
    pub fn add_scaled(&self, other: &ModelParams, scale: f64) -> Result<Self> {
        let a = self.to_vec();
        let b = other.to_vec();
        if a.len() != b.len() {
            return Err(Error::Shape("parameter shapes differ".into()));
        }
        self.with_vec(&a.iter().zip(&b).map(|(x, y)| x + scale * y).collect::<Vec<_>>())
    }

    pub fn scale_last_layer(&self, c: f64) -> Self {
        let mut out = self.clone();
        let last = out.layers.last_mut().expect("non-empty");
        last.weight.data_mut().iter_mut().for_each(|w| *w *= c);
        last.bias.iter_mut().for_each(|b| *b *= c);
        out
    }

    // -- binary checkpoint ------------------------------------------------

    const MAGIC: &'static [u8; 4] = b"GLMP";
    const VERSION: u32 = 1;

    /// Little-endian checkpoint: magic `GLMP`, version `u32`, activation
    /// `u8` (0 identity, 1 relu), layer count `u32`, then per layer
    /// `rows u32, cols u32`, `rows*cols` weights and `rows` biases as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.num_params());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        out.push(match self.activation {
            Activation::Identity => 0,
            Activation::Relu => 1,
        });
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.fan_out() as u32).to_le_bytes());
            out.extend_from_slice(&(l.fan_in() as u32).to_le_bytes());
            for v in l.weight.data().iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor { buf: bytes, pos: 0 };
        if cur.take(4)? != Self::MAGIC {
            return Err(invalid("bad checkpoint magic"));
        }
        let version = cur.u32()?;
        if version != Self::VERSION {
            return Err(invalid(format!("unsupported checkpoint version {version}")));
        }
        let activation = match cur.take(1)?[0] {
            0 => Activation::Identity,
            1 => Activation::Relu,
            a => return Err(invalid(format!("unknown activation tag {a}"))),
        };
        let n = cur.u32()? as usize;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let w = (0..rows * cols).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            let bias = (0..rows).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Layer { weight: DenseMatrix::from_vec(rows, cols, w)?, bias });
        }
        if cur.pos != bytes.len() {
            return Err(invalid("trailing bytes in checkpoint"));
        }
        Self::from_layers(layers, activation)
    }
}

struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl ByteCursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(invalid("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

// ---------------------------------------------------------------------------
// Forward / backward

fn check_input(params: &ModelParams, x: &DenseMatrix) -> Result<()> {
    if x.cols() != params.input_width() {
        return Err(Error::Shape(format!(
            "input has {} columns, model expects {}",
            x.cols(),
            params.input_width()
        )));
    }
    Ok(())
}

fn check_labels(params: &ModelParams, y: &[usize], kind: LossKind, rows: usize) -> Result<()> {
    if y.len() != rows {
        return Err(Error::Shape(format!("{rows} rows but {} labels", y.len())));
    }
    let width = params.output_width();
    if kind.is_binary_margin() && width != 1 {
        return Err(invalid(format!("{kind} loss needs a single output, model has {width}")));
    }
    let classes = if width == 1 { 2 } else { width };
    if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
        return Err(invalid(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

fn affine(x: &DenseMatrix, layer: &Layer) -> DenseMatrix {
    let mut z = x.matmul_t(&layer.weight).expect("checked shapes");
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}

fn relu_inplace(z: &mut DenseMatrix) {
    z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Pre-activations of every layer, plus the input as entry 0 of `acts`.
struct Trace {
    acts: Vec<DenseMatrix>,
    logits: DenseMatrix,
}

fn forward_trace(params: &ModelParams, x: &DenseMatrix) -> Trace {
    let mut acts = vec![x.clone()];
    let n = params.layers.len();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = affine(acts.last().expect("non-empty"), layer);
        if i + 1 == n {
            return Trace { acts, logits: z };
        }
        if params.activation == Activation::Relu {
            relu_inplace(&mut z);
        }
        acts.push(z);
    }
    unreachable!("model has at least one layer")
}

/// Logits (no softmax).
pub fn forward(params: &ModelParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    check_input(params, x)?;
    Ok(forward_trace(params, x).logits)
}

/// Activations feeding the last layer. For a single-layer model this is
/// the input itself.
pub fn penultimate(params: &ModelParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    check_input(params, x)?;
    let mut h = x.clone();
    for layer in &params.layers[..params.layers.len() - 1] {
        h = affine(&h, layer);
        if params.activation == Activation::Relu {
            relu_inplace(&mut h);
        }
    }
    Ok(h)
}

/// Sum of per-sample losses and the matrix of `dL/d logits`.
pub fn output_grads(logits: &DenseMatrix, y: &[usize], kind: LossKind) -> (f64, DenseMatrix) {
    let mut g = DenseMatrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (i, &label) in y.iter().enumerate() {
        total += kind.loss_and_output_grad(logits.row(i), label, g.row_mut(i));
    }
    (total, g)
}

pub fn loss_value(params: &ModelParams, x: &DenseMatrix, y: &[usize], kind: LossKind) -> Result<f64> {
    check_input(params, x)?;
    check_labels(params, y, kind, x.rows())?;
    let logits = forward_trace(params, x).logits;
    let mut scratch = vec![0.0; logits.cols()];
    Ok(y.iter()
        .enumerate()
        .map(|(i, &l)| kind.loss_and_output_grad(logits.row(i), l, &mut scratch))
        .sum())
}

/// Exact gradient of [`loss_value`] with respect to every parameter.
pub fn grad_full(params: &ModelParams, x: &DenseMatrix, y: &[usize], kind: LossKind) -> Result<ModelParams> {
    Ok(loss_and_grad(params, x, y, kind)?.1)
}

pub fn loss_and_grad(
    params: &ModelParams,
    x: &DenseMatrix,
    y: &[usize],
    kind: LossKind,
) -> Result<(f64, ModelParams)> {
    check_input(params, x)?;
    check_labels(params, y, kind, x.rows())?;
    let trace = forward_trace(params, x);
    let (loss, mut delta) = output_grads(&trace.logits, y, kind);
    let mut grad = params.zeros_like();
    for l in (0..params.layers.len()).rev() {
        let a_prev = &trace.acts[l];
        let gw = delta.t_matmul(a_prev)?;
        let mut gb = vec![0.0; delta.cols()];
        for row in delta.row_iter() {
            for (b, d) in gb.iter_mut().zip(row) {
                *b += d;
            }
        }
        grad.layers[l] = Layer { weight: gw, bias: gb };
        if l > 0 {
            let mut back = delta.matmul(&params.layers[l].weight)?;
            // a_prev = relu(z_prev); relu'(z) = 1 where a_prev > 0
            for (v, a) in back.data_mut().iter_mut().zip(a_prev.data()) {
                if params.activation == Activation::Relu && *a <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = back;
        }
    }
    Ok((loss, grad))
}

/// One row per sample: the gradient of that sample's loss restricted to
/// the last layer, flattened like [`ModelParams::last_layer_vec`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGradTable {
    pub grads: DenseMatrix,
}

impl PerSampleGradTable {
    pub fn row(&self, i: usize) -> &[f64] {
        self.grads.row(i)
    }

    pub fn len(&self) -> usize {
        self.grads.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.grads.cols()
    }
}

/// Builds last-layer gradient rows `vec(delta_i (x) [h_i, 1])` from
/// penultimate activations `h` and output gradients `delta`.
pub fn outer_rows(h: &DenseMatrix, delta: &DenseMatrix) -> DenseMatrix {
    let (n, hw, out) = (h.rows(), h.cols(), delta.cols());
    let p = out * (hw + 1);
    let mut g = DenseMatrix::zeros(n, p);
    for i in 0..n {
        let hi = h.row(i);
        let di = delta.row(i);
        let row = g.row_mut(i);
        for (o, &d) in di.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (slot, &hv) in row[o * hw..(o + 1) * hw].iter_mut().zip(hi) {
                *slot = d * hv;
            }
            row[out * hw + o] = d;
        }
    }
    g
}

pub fn last_layer_per_sample_grads(
    params: &ModelParams,
    x: &DenseMatrix,
    y: &[usize],
    kind: LossKind,
) -> Result<PerSampleGradTable> {
    check_input(params, x)?;
    check_labels(params, y, kind, x.rows())?;
    let h = penultimate(params, x)?;
    let logits = affine(&h, params.last());
    let (_, delta) = output_grads(&logits, y, kind);
    Ok(PerSampleGradTable { grads: outer_rows(&h, &delta) })
}

/// Argmax over logits with ties to the lowest class. A single-output
/// model predicts class 1 only for strictly positive scores.
pub fn hypothesized_labels(params: &ModelParams, x: &DenseMatrix) -> Result<Vec<usize>> {
    let logits = forward(params, x)?;
    Ok(logits.row_iter().map(argmax_row).collect())
}

fn argmax_row(row: &[f64]) -> usize {
    if row.len() == 1 {
        return usize::from(row[0] > 0.0);
    }
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Class probabilities per row (softmax, or sigmoid for a single output).
pub fn probabilities(params: &ModelParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    let logits = forward(params, x)?;
    if logits.cols() == 1 {
        let data = logits.data().iter().flat_map(|&f| {
            let p = sigmoid(f);
            [1.0 - p, p]
        });
        return DenseMatrix::from_vec(logits.rows(), 2, data.collect());
    }
    let mut p = logits;
    for r in 0..p.rows() {
        let lse = log_sum_exp(p.row(r))?;
        p.row_mut(r).iter_mut().for_each(|v| *v = (*v - lse).exp());
    }
    Ok(p)
}

pub fn accuracy(params: &ModelParams, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let pred = hypothesized_labels(params, ds.features())?;
    let hits = pred.iter().zip(ds.labels()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / ds.len() as f64)
}

/// One pass over a seeded shuffle of `subset` in mini-batches, each step
/// `theta -= lr * sum of batch gradients`. The input is left untouched.
pub fn sgd_epoch(
    params: &ModelParams,
    ds: &Dataset,
    subset: &[usize],
    lr: f64,
    batch_size: usize,
    kind: LossKind,
    rng: &mut SeededRng,
) -> Result<ModelParams> {
    sgd_epoch_xy(params, ds.features(), ds.labels(), subset, lr, batch_size, kind, rng)
}

#[allow(clippy::too_many_arguments)]
pub fn sgd_epoch_xy(
    params: &ModelParams,
    x: &DenseMatrix,
    y: &[usize],
    subset: &[usize],
    lr: f64,
    batch_size: usize,
    kind: LossKind,
    rng: &mut SeededRng,
) -> Result<ModelParams> {
    if subset.is_empty() {
        return Err(invalid("sgd_epoch on an empty subset"));
    }
    if !(lr >= 0.0) || batch_size == 0 {
        return Err(invalid("lr must be non-negative and batch_size positive"));
    }
    let mut order = subset.to_vec();
    rng.shuffle(&mut order);
    let mut theta = params.clone();
    for batch in order.chunks(batch_size) {
        let bx = x.select_rows(batch);
        let by: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
        let g = grad_full(&theta, &bx, &by, kind)?;
        theta = theta.add_scaled(&g, -lr)?;
    }
    if theta.to_vec().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameters diverged during SGD".into()));
    }
    Ok(theta)
}
