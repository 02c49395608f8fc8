//! Datasets: LIBSVM ingestion, stratified splits, label-noise and
//! class-imbalance injectors, and 2-D synthetic generators.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::numerics::{DenseMatrix, SeededRng};

/// Provenance of a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowFlags {
    pub noise_flipped: bool,
    /// Label before any noise injection. Equals the current label unless
    /// `noise_flipped`.
    pub original_label: usize,
}

/// Dense features with integer class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    num_classes: usize,
    flags: Vec<RowFlags>,
    /// Raw label value for each class id, used when writing LIBSVM.
    class_values: Vec<f64>,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let class_values = (0..num_classes).map(|c| c as f64).collect();
        Self::with_class_values(features, labels, num_classes, class_values)
    }

    fn with_class_values(
        features: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        class_values: Vec<f64>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(invalid("num_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        let flags = labels
            .iter()
            .map(|&l| RowFlags { noise_flipped: false, original_label: l })
            .collect();
        Ok(Self { features, labels, num_classes, flags, class_values })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn flags(&self) -> &[RowFlags] {
        &self.flags
    }

    pub fn class_values(&self) -> &[f64] {
        &self.class_values
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows grouped by class, each group in ascending row order.
    pub fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// New dataset holding `idx` rows (flags included), in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            flags: idx.iter().map(|&i| self.flags[i]).collect(),
            class_values: self.class_values.clone(),
        }
    }

    /// Same rows with features replaced (e.g. after standardization).
    pub fn with_features(&self, features: DenseMatrix) -> Result<Dataset> {
        if features.rows() != self.len() {
            return Err(Error::Shape("replacement features change row count".into()));
        }
        Ok(Dataset { features, ..self.clone() })
    }

    pub fn noise_count(&self) -> usize {
        self.flags.iter().filter(|f| f.noise_flipped).count()
    }
}

// ---------------------------------------------------------------------------
// LIBSVM

/// Parses LIBSVM text. Raw labels are remapped to ids `0..C` in ascending
/// order of their numeric value.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    parse_libsvm_reader(text.as_bytes())
}

pub fn parse_libsvm_reader<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut dim = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim_end_matches('\r').trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = parse_number(label_tok, lineno)?;

        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx_tok, val_tok) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected <index>:<value>, got {tok:?}"),
            })?;
            let idx: usize = idx_tok.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric index {idx_tok:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Format { line: lineno, msg: "indices are 1-based".into() });
            }
            if idx <= last {
                return Err(Error::Format {
                    line: lineno,
                    msg: format!("index {idx} does not increase past {last}"),
                });
            }
            last = idx;
            entries.push((idx, parse_number(val_tok, lineno)?));
        }
        dim = dim.max(last);
        raw_labels.push(label);
        rows.push(entries);
    }

    let mut distinct = raw_labels.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let labels = raw_labels
        .iter()
        .map(|l| distinct.binary_search_by(|d| d.total_cmp(l)).expect("label present"))
        .collect();

    let mut features = DenseMatrix::zeros(rows.len(), dim);
    for (r, entries) in rows.iter().enumerate() {
        let row = features.row_mut(r);
        for &(idx, v) in entries {
            row[idx - 1] = v;
        }
    }
    let num_classes = distinct.len().max(1);
    Dataset::with_class_values(features, labels, num_classes, distinct)
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("non-numeric token {tok:?}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite value {tok:?}") });
    }
    Ok(v)
}

/// Writes LIBSVM text. Zero entries are omitted except the last column,
/// which is always written so the dimension survives a round trip.
pub fn serialize_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    let d = ds.dim();
    for (i, row) in ds.features.row_iter().enumerate() {
        out.push_str(&ds.class_values[ds.labels[i]].to_string());
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 || j + 1 == d {
                out.push(' ');
                out.push_str(&format!("{}:{}", j + 1, v));
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        for (name, f) in [("train", train_frac), ("val", val_frac), ("test", test_frac)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(invalid(format!("{name} fraction {f} outside (0, 1)")));
            }
        }
        if (train_frac + val_frac + test_frac - 1.0).abs() > 1e-9 {
            return Err(invalid("split fractions must sum to 1"));
        }
        Ok(Self { train_frac, val_frac, test_frac, seed })
    }
}

/// Index partition behind [`split`]: per class, rows are shuffled with the
/// spec seed, `floor(frac * count)` go to validation and test, and the
/// remainder to train. Each part is returned in ascending row order.
pub fn split_indices(ds: &Dataset, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    let spec = SplitSpec::new(spec.train_frac, spec.val_frac, spec.test_frac, spec.seed)?;
    let rng = SeededRng::new(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (c, mut rows) in ds.rows_by_class().into_iter().enumerate() {
        rng.child(c as u64).shuffle(&mut rows);
        let n_val = floor_tol(spec.val_frac * rows.len() as f64);
        let n_test = floor_tol(spec.test_frac * rows.len() as f64);
        parts[1].extend_from_slice(&rows[..n_val]);
        parts[2].extend_from_slice(&rows[n_val..n_val + n_test]);
        parts[0].extend_from_slice(&rows[n_val + n_test..]);
    }
    for (name, p) in ["train", "val", "test"].iter().zip(parts.iter_mut()) {
        if p.is_empty() {
            return Err(invalid(format!("{name} split is empty")));
        }
        p.sort_unstable();
    }
    Ok(parts)
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [tr, va, te] = split_indices(ds, spec)?;
    Ok((ds.subset(&tr), ds.subset(&va), ds.subset(&te)))
}

/// Stratified two-way split: carves `frac` of each class off `ds`.
/// Returns `(rest, carved)`.
pub fn carve(ds: &Dataset, frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(invalid(format!("carve fraction {frac} outside (0, 1)")));
    }
    let rng = SeededRng::new(seed);
    let (mut rest, mut carved) = (Vec::new(), Vec::new());
    for (c, mut rows) in ds.rows_by_class().into_iter().enumerate() {
        rng.child(c as u64).shuffle(&mut rows);
        let n = floor_tol(frac * rows.len() as f64);
        carved.extend_from_slice(&rows[..n]);
        rest.extend_from_slice(&rows[n..]);
    }
    if rest.is_empty() || carved.is_empty() {
        return Err(invalid("carve produced an empty part"));
    }
    rest.sort_unstable();
    carved.sort_unstable();
    Ok((ds.subset(&rest), ds.subset(&carved)))
}

// Products like 0.3 * 10 land a hair above the integer; absorb that.
fn floor_tol(x: f64) -> usize {
    (x + 1e-9).floor() as usize
}

fn ceil_tol(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

// ---------------------------------------------------------------------------
// Corruption

/// Flips exactly `round(rate * n)` labels (half away from zero), each to a
/// uniformly chosen different class.
pub fn inject_label_noise(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("noise rate {rate} outside [0, 1)")));
    }
    if ds.num_classes < 2 {
        return Err(invalid("label noise needs at least two classes"));
    }
    let count = (rate * ds.len() as f64).round() as usize;
    let mut rng = SeededRng::new(seed);
    let mut out = ds.clone();
    for i in rng.sample_indices(ds.len(), count) {
        let old = out.labels[i];
        let mut new = rng.below(ds.num_classes - 1);
        if new >= old {
            new += 1;
        }
        out.labels[i] = new;
        let original = if out.flags[i].noise_flipped { out.flags[i].original_label } else { old };
        out.flags[i] = RowFlags { noise_flipped: new != original, original_label: original };
    }
    Ok(out)
}

/// The `ceil(affected_frac * C)` classes an imbalance injection with this
/// seed removes rows from, ascending.
pub fn affected_classes(num_classes: usize, affected_frac: f64, seed: u64) -> Vec<usize> {
    let n = ceil_tol(affected_frac * num_classes as f64).min(num_classes);
    let mut classes: Vec<usize> = (0..num_classes).collect();
    SeededRng::new(seed).shuffle(&mut classes);
    let mut chosen = classes[..n].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Keeps `ceil(keep_frac * count)` rows of each affected class, sampled
/// with a per-class generator; other classes are untouched. Row order is
/// preserved.
pub fn inject_class_imbalance(
    ds: &Dataset,
    affected_frac: f64,
    keep_frac: f64,
    seed: u64,
) -> Result<Dataset> {
    for (name, f) in [("affected_class_frac", affected_frac), ("keep_frac", keep_frac)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(invalid(format!("{name} {f} outside (0, 1)")));
        }
    }
    let affected = affected_classes(ds.num_classes, affected_frac, seed);
    let rng = SeededRng::new(seed);
    let groups = ds.rows_by_class();
    let mut keep = vec![true; ds.len()];
    for &c in &affected {
        let rows = &groups[c];
        let kept = ceil_tol(keep_frac * rows.len() as f64);
        if kept == 0 {
            return Err(invalid(format!("class {c} would be emptied")));
        }
        let mut drop: Vec<usize> = rows.clone();
        rng.child(c as u64 + 1).shuffle(&mut drop);
        for &i in &drop[kept..] {
            keep[i] = false;
        }
    }
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| keep[i]).collect();
    Ok(ds.subset(&idx))
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Per-feature zero-mean unit-variance transform fitted on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DenseMatrix) -> Self {
        let (n, d) = (x.rows().max(1) as f64, x.cols());
        let mut mean = vec![0.0; d];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in x.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape("standardizer dimension mismatch".into()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Equal-width binning of each feature into `bins` buckets over the fitted
/// range. Values outside the range clamp to the edge buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualWidthBins {
    lo: Vec<f64>,
    width: Vec<f64>,
    bins: usize,
}

impl EqualWidthBins {
    pub const DEFAULT_BINS: usize = 10;

    pub fn fit(x: &DenseMatrix, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("bin count must be positive"));
        }
        let d = x.cols();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in x.row_iter() {
            for j in 0..d {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        let width = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| if h > l { (h - l) / bins as f64 } else { 1.0 })
            .collect();
        let lo = lo.into_iter().map(|l| if l.is_finite() { l } else { 0.0 }).collect();
        Ok(Self { lo, width, bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Bin ids, stored as `f64` so the result is still a feature matrix.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.lo.len() {
            return Err(Error::Shape("binning dimension mismatch".into()));
        }
        let mut out = x.clone();
        let top = (self.bins - 1) as f64;
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = ((*v - self.lo[j]) / self.width[j]).floor().clamp(0.0, top);
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SyntheticKind {
    Separable2,
    Separable4,
    Overlapping4,
    BinarySlack,
    ShiftedValidation2,
    ShiftedValidation4,
}

/// Translation applied to every blob center of a shifted-validation
/// companion set.
pub const VALIDATION_SHIFT: [f64; 2] = [0.5, 0.5];

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 6] = [
        SyntheticKind::Separable2,
        SyntheticKind::Separable4,
        SyntheticKind::Overlapping4,
        SyntheticKind::BinarySlack,
        SyntheticKind::ShiftedValidation2,
        SyntheticKind::ShiftedValidation4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Separable2 => "separable-2",
            SyntheticKind::Separable4 => "separable-4",
            SyntheticKind::Overlapping4 => "overlapping-4",
            SyntheticKind::BinarySlack => "binary-slack",
            SyntheticKind::ShiftedValidation2 => "shifted-validation-2",
            SyntheticKind::ShiftedValidation4 => "shifted-validation-4",
        }
    }

    /// Blob centers, one per class, and the shared per-axis standard
    /// deviation.
    ///
    /// | kind                 | centers                 | sd   |
    /// |----------------------|-------------------------|------|
    /// | separable-2          | (-2, 0), (2, 0)         | 0.5  |
    /// | separable-4          | (+-2, +-2)              | 0.5  |
    /// | overlapping-4        | (+-1, +-1)              | 0.75 |
    /// | binary-slack         | (-1, 0), (1, 0)         | 0.75 |
    /// | shifted-validation-2 | as binary-slack         | 0.75 |
    /// | shifted-validation-4 | as overlapping-4        | 0.75 |
    pub fn blobs(self) -> (&'static [[f64; 2]], f64) {
        const SEP2: [[f64; 2]; 2] = [[-2.0, 0.0], [2.0, 0.0]];
        const SEP4: [[f64; 2]; 4] = [[-2.0, -2.0], [2.0, -2.0], [-2.0, 2.0], [2.0, 2.0]];
        const OVL4: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]];
        const SLACK: [[f64; 2]; 2] = [[-1.0, 0.0], [1.0, 0.0]];
        match self {
            SyntheticKind::Separable2 => (&SEP2, 0.5),
            SyntheticKind::Separable4 => (&SEP4, 0.5),
            SyntheticKind::Overlapping4 | SyntheticKind::ShiftedValidation4 => (&OVL4, 0.75),
            SyntheticKind::BinarySlack | SyntheticKind::ShiftedValidation2 => (&SLACK, 0.75),
        }
    }

    pub fn num_classes(self) -> usize {
        self.blobs().0.len()
    }

    pub fn is_shifted(self) -> bool {
        matches!(self, SyntheticKind::ShiftedValidation2 | SyntheticKind::ShiftedValidation4)
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SyntheticKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown synthetic kind {s:?}")))
    }
}

/// Output of [`gen_synthetic`]. `shifted_validation` is present only for
/// the shifted-validation kinds.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub data: Dataset,
    pub shifted_validation: Option<Dataset>,
}

/// Gaussian blobs, `n_per_class` rows per class, class-major row order.
pub fn gen_synthetic(kind: SyntheticKind, n_per_class: usize, seed: u64) -> Result<Synthetic> {
    if n_per_class < 2 {
        return Err(invalid("n_per_class must be at least 2"));
    }
    let (centers, sd) = kind.blobs();
    let mut rng = SeededRng::new(seed);
    let data = blobs(centers, sd, [0.0, 0.0], n_per_class, &mut rng)?;
    let shifted_validation = if kind.is_shifted() {
        let mut vrng = rng.child(1);
        Some(blobs(centers, sd, VALIDATION_SHIFT, n_per_class, &mut vrng)?)
    } else {
        None
    };
    Ok(Synthetic { data, shifted_validation })
}

fn blobs(
    centers: &[[f64; 2]],
    sd: f64,
    offset: [f64; 2],
    n_per_class: usize,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    let mut data = Vec::with_capacity(centers.len() * n_per_class * 2);
    let mut labels = Vec::with_capacity(centers.len() * n_per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            data.push(center[0] + offset[0] + sd * rng.normal());
            data.push(center[1] + offset[1] + sd * rng.normal());
            labels.push(c);
        }
    }
    Dataset::new(DenseMatrix::from_vec(labels.len(), 2, data)?, labels, centers.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_single_line() {
        let ds = parse_libsvm("1 1:0.5 3:2.0").unwrap();
        assert_eq!(ds.features().data(), &[0.5, 0.0, 2.0]);
        assert_eq!(ds.num_classes(), 1);
        assert_eq!(ds.labels(), &[0]);
    }

    #[test]
    fn parse_remaps_sorted() {
        let ds = parse_libsvm("+1 1:1\n-1 1:2\r\n\n# comment\n+1 2:3 # trailing\n").unwrap();
        assert_eq!(ds.labels(), &[1, 0, 1]);
        assert_eq!(ds.class_values(), &[-1.0, 1.0]);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.features().row(2), &[0.0, 3.0]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_libsvm("1 1:1\n1 2:abc\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        match parse_libsvm("1 0:1\n").unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 1),
            e => panic!("unexpected {e}"),
        }
        match parse_libsvm("1 1:1\n0 3:1 2:1\n").unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(parse_libsvm("x 1:1").unwrap_err(), Error::Parse { line: 1, .. }));
    }

    #[test]
    fn five_line_round_trip() {
        let text = "2 1:0.25 4:-1.5\n0 2:3\n2 1:1e-3 2:7 3:0.125\n1 4:2\n0 1:-0.5\n";
        let ds = parse_libsvm(text).unwrap();
        let again = parse_libsvm(&serialize_libsvm(&ds)).unwrap();
        assert_eq!(ds, again);
        assert_eq!(ds.dim(), 4);
    }

    fn two_class(n_per: usize) -> Dataset {
        gen_synthetic(SyntheticKind::Separable2, n_per, 1).unwrap().data
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = two_class(50);
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 9).unwrap();
        let [a, b, c] = split_indices(&ds, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
        assert_eq!(split_indices(&ds, &spec).unwrap(), [a.clone(), b.clone(), c.clone()]);
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (tr, va, te) = split(&ds, &spec).unwrap();
        for part in [&tr, &va, &te] {
            let counts = part.class_counts();
            assert!((counts[0] as i64 - counts[1] as i64).abs() <= 1);
        }
    }

    #[test]
    fn split_rejects_bad_fractions_and_empty_parts() {
        assert!(SplitSpec::new(0.9, 0.1, 0.0, 0).is_err());
        assert!(SplitSpec::new(0.5, 0.3, 0.1, 0).is_err());
        let ds = two_class(2);
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 0).unwrap();
        assert!(split(&ds, &spec).is_err());
    }

    #[test]
    fn noise_counts_exact() {
        let ds = two_class(500);
        let noisy = inject_label_noise(&ds, 0.3, 4).unwrap();
        assert_eq!(noisy.noise_count(), 300);
        for (l, f) in noisy.labels().iter().zip(noisy.flags()) {
            if f.noise_flipped {
                assert_ne!(*l, f.original_label);
            } else {
                assert_eq!(*l, f.original_label);
            }
        }
        assert_eq!(inject_label_noise(&ds, 0.0, 4).unwrap(), ds);
        assert!(inject_label_noise(&ds, 1.0, 4).is_err());
    }

    #[test]
    fn imbalance_counts() {
        assert_eq!(affected_classes(10, 0.3, 1).len(), 3);
        let ds = gen_synthetic(SyntheticKind::Separable4, 100, 2).unwrap().data;
        let out = inject_class_imbalance(&ds, 0.3, 0.1, 5).unwrap();
        let affected = affected_classes(4, 0.3, 5);
        assert_eq!(affected.len(), 2);
        for (c, n) in out.class_counts().into_iter().enumerate() {
            assert_eq!(n, if affected.contains(&c) { 10 } else { 100 });
        }
        // unaffected rows survive verbatim
        let groups = ds.rows_by_class();
        let out_groups = out.rows_by_class();
        for c in (0..4).filter(|c| !affected.contains(c)) {
            for (a, b) in groups[c].iter().zip(&out_groups[c]) {
                assert_eq!(ds.features().row(*a), out.features().row(*b));
            }
        }
    }

    #[test]
    fn imbalance_keep_boundary() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..1010 {
            rows.push(vec![i as f64]);
            labels.push(usize::from(i >= 1000));
        }
        let ds = Dataset::new(DenseMatrix::from_rows(&rows).unwrap(), labels, 2).unwrap();
        // ceil(0.5 * 2) = 1 class affected; find which and check 999 kept if class 0.
        let affected = affected_classes(2, 0.5, 3);
        let out = inject_class_imbalance(&ds, 0.5, 0.999, 3).unwrap();
        let counts = out.class_counts();
        if affected == [0] {
            assert_eq!(counts, vec![999, 10]);
        } else {
            assert_eq!(counts, vec![1000, 10]);
        }
        assert!(inject_class_imbalance(&ds, 0.5, 1.0, 3).is_err());
    }

    #[test]
    fn synthetic_shapes_and_shift() {
        let s = gen_synthetic(SyntheticKind::Separable4, 2, 0).unwrap();
        assert_eq!(s.data.len(), 8);
        assert!(s.shifted_validation.is_none());
        assert!(gen_synthetic(SyntheticKind::Separable2, 1, 0).is_err());
        assert!("nope".parse::<SyntheticKind>().is_err());
        assert_eq!("binary-slack".parse::<SyntheticKind>().unwrap(), SyntheticKind::BinarySlack);

        // With zero spread the companion set sits exactly at center + offset.
        let mut rng = SeededRng::new(1);
        let (centers, _) = SyntheticKind::ShiftedValidation2.blobs();
        let v = blobs(centers, 0.0, VALIDATION_SHIFT, 3, &mut rng).unwrap();
        for (row, &l) in v.features().row_iter().zip(v.labels()) {
            assert_eq!(row, &[centers[l][0] + VALIDATION_SHIFT[0], centers[l][1] + VALIDATION_SHIFT[1]]);
        }
        let s = gen_synthetic(SyntheticKind::ShiftedValidation2, 200, 3).unwrap();
        let val = s.shifted_validation.unwrap();
        let mean_x = |d: &Dataset| d.features().row_iter().map(|r| r[0]).sum::<f64>() / d.len() as f64;
        assert!((mean_x(&val) - mean_x(&s.data) - VALIDATION_SHIFT[0]).abs() < 0.15);
    }

    #[test]
    fn standardize_and_bin() {
        let ds = two_class(50);
        let st = Standardizer::fit(ds.features());
        let z = st.apply(ds.features()).unwrap();
        let mean: f64 = z.row_iter().map(|r| r[0]).sum::<f64>() / 100.0;
        assert!(mean.abs() < 1e-12);
        let bins = EqualWidthBins::fit(&z, 10).unwrap();
        let b = bins.apply(&z).unwrap();
        assert!(b.data().iter().all(|&v| (0.0..10.0).contains(&v) && v.fract() == 0.0));
    }

    proptest! {
        #[test]
        fn libsvm_round_trip(
            rows in proptest::collection::vec(
                (0usize..3, proptest::collection::vec(prop_oneof![Just(0.0), -1e6f64..1e6], 4)), 1..12)
        ) {
            let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let feats: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
            let ds = Dataset::new(DenseMatrix::from_rows(&feats).unwrap(), labels, 3).unwrap();
            let back = parse_libsvm(&serialize_libsvm(&ds)).unwrap();
            prop_assert_eq!(back.dim(), 4);
            for (a, b) in back.features().data().iter().zip(ds.features().data()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            // ids are re-densified over the labels that actually occur
            let present: Vec<usize> = {
                let mut v = ds.labels().to_vec(); v.sort_unstable(); v.dedup(); v
            };
            for (a, b) in back.labels().iter().zip(ds.labels()) {
                prop_assert_eq!(present[*a], *b);
            }
        }

        #[test]
        fn noise_preserves_shape(rate in 0.0f64..0.9, seed in any::<u64>()) {
            let ds = gen_synthetic(SyntheticKind::Separable4, 10, 0).unwrap().data;
            let out = inject_label_noise(&ds, rate, seed).unwrap();
            prop_assert_eq!(out.len(), ds.len());
            prop_assert_eq!(out.dim(), ds.dim());
            prop_assert_eq!(out.num_classes(), ds.num_classes());
            prop_assert_eq!(out.noise_count(), (rate * 40.0).round() as usize);
            prop_assert_eq!(out.features(), ds.features());
        }
    }
}
