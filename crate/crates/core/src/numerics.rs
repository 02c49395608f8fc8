//! Dense row-major matrices, stable reductions and the seeded generator
//! every other module draws randomness from.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} != {rows} x {cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("entry {pos} is {}", data[pos])));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on zero-width chunks.
        (0..self.rows).map(move |r| self.row(r))
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), orow);
            }
        }
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_t {}x{} * ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a = self.row(r);
            for c in 0..other.rows {
                out.data[r * other.rows + c] = dot(a, other.row(c));
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "t_matmul ({}x{})^T * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let b = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, b, &mut out.data[i * other.cols..(i + 1) * other.cols]);
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "matvec {}x{} * {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    pub fn max_row_norm(&self) -> f64 {
        self.row_iter().map(norm).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `log(sum(exp(v)))` with a max shift so large entries do not overflow.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("log_sum_exp input".into()));
    }
    let s: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + s.ln())
}

/// Numerically stable `log(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Symmetric matrix of squared Euclidean distances between the rows of `a`.
/// The diagonal is exactly zero.
pub fn pairwise_sq_dists(a: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() == 0 {
        return Err(Error::InvalidArgument("pairwise_sq_dists needs at least one row".into()));
    }
    let n = a.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(a.row(i), a.row(j));
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    Ok(out)
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("f evaluated to non-finite near coordinate {i}")));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Inverse of a symmetric positive (semi-)definite matrix via Cholesky.
/// A matrix that fails to factor is retried once with `ridge * I` added.
pub fn spd_inverse(m: &DenseMatrix, ridge: f64) -> Result<DenseMatrix> {
    if m.rows() != m.cols() {
        return Err(Error::Shape(format!("spd_inverse on {}x{}", m.rows(), m.cols())));
    }
    match cholesky(m) {
        Some(l) => Ok(cholesky_inverse(&l)),
        None => {
            let mut reg = m.clone();
            for i in 0..m.rows() {
                let v = reg.get(i, i) + ridge;
                reg.set(i, i, v);
            }
            cholesky(&reg)
                .map(|l| cholesky_inverse(&l))
                .ok_or_else(|| Error::InvalidArgument("matrix not positive definite after ridge".into()))
        }
    }
}

fn cholesky(m: &DenseMatrix) -> Option<DenseMatrix> {
    let n = m.rows();
    let scale = (0..n).map(|i| m.get(i, i).abs()).fold(0.0, f64::max).max(1.0);
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 1e-12 * scale {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}

fn cholesky_inverse(l: &DenseMatrix) -> DenseMatrix {
    let n = l.rows();
    let mut inv = DenseMatrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for c in 0..n {
        // forward solve L z = e_c
        for i in 0..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l.get(i, k) * col[k];
            }
            col[i] = s / l.get(i, i);
        }
        // back solve L^T x = z
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in (i + 1)..n {
                s -= l.get(k, i) * col[k];
            }
            col[i] = s / l.get(i, i);
        }
        for i in 0..n {
            inv.set(i, c, col[i]);
        }
    }
    inv
}

/// Reproducible generator: ChaCha8 keyed by a 64-bit seed.
///
/// ChaCha output is specified bit-for-bit, so a seed yields the same
/// stream on every platform. Parallel consumers never share a stream;
/// they derive children with [`SeededRng::child`].
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for stream `stream`, seeded with
    /// `seed ^ splitmix64(stream)`.
    pub fn child(&self, stream: u64) -> Self {
        Self::new(derive_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, in sampled order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }

    /// `k` distinct items of `pool`, in sampled order.
    pub fn sample_from<T: Copy>(&mut self, pool: &[T], k: usize) -> Vec<T> {
        self.sample_indices(pool.len(), k).into_iter().map(|i| pool[i]).collect()
    }
}

/// SplitMix64 finalizer applied to `stream`, xor-ed into `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = stream.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seed ^ (z ^ (z >> 31))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lse_symmetric_pair() {
        let v = log_sum_exp(&[0.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn lse_large_inputs_do_not_overflow() {
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn lse_matches_direct_sum_small_magnitudes() {
        let mut rng = SeededRng::new(11);
        for _ in 0..20 {
            let v: Vec<f64> = (0..5).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
            let direct = v.iter().map(|x| x.exp()).sum::<f64>().ln();
            assert!((log_sum_exp(&v).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn lse_empty_is_error() {
        let err = log_sum_exp(&[]).unwrap_err();
        assert_eq!(err.to_string(), "empty vector");
    }

    #[test]
    fn pairwise_single_row() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(pairwise_sq_dists(&a).unwrap().data(), &[0.0]);
    }

    #[test]
    fn pairwise_345() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let d = pairwise_sq_dists(&a).unwrap();
        assert_eq!(d.get(0, 1), 25.0);
        assert_eq!(d.get(1, 0), 25.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn pairwise_matches_double_loop() {
        let mut rng = SeededRng::new(5);
        let data: Vec<f64> = (0..18).map(|_| rng.normal()).collect();
        let a = DenseMatrix::from_vec(6, 3, data).unwrap();
        let d = pairwise_sq_dists(&a).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let mut s = 0.0;
                for c in 0..3 {
                    s += (a.get(i, c) - a.get(j, c)).powi(2);
                }
                assert!((d.get(i, j) - s).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fd_square() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn fd_constant_is_zero() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.5], 1e-4).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fd_rejects_non_finite_and_bad_step() {
        assert!(finite_diff_grad(|x| 1.0 / (x[0] - 1.0e-6), &[0.0], 1e-6).is_err());
        assert!(finite_diff_grad(|x| x[0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn from_vec_validates() {
        assert!(DenseMatrix::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(DenseMatrix::from_vec(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = SeededRng::new(3);
        let a = DenseMatrix::from_vec(3, 4, (0..12).map(|_| rng.normal()).collect()).unwrap();
        let b = DenseMatrix::from_vec(4, 2, (0..8).map(|_| rng.normal()).collect()).unwrap();
        let ab = a.matmul(&b).unwrap();
        let ab2 = a.matmul_t(&b.transpose()).unwrap();
        let ab3 = a.transpose().t_matmul(&b).unwrap();
        for ((x, y), z) in ab.data().iter().zip(ab2.data()).zip(ab3.data()) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn spd_inverse_roundtrip_and_ridge() {
        let m = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let inv = spd_inverse(&m, 1e-6).unwrap();
        let id = m.matmul(&inv).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id.get(i, j) - e).abs() < 1e-12);
            }
        }
        let singular = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let inv = spd_inverse(&singular, 1e-6).unwrap();
        assert!(inv.all_finite());
    }

    #[test]
    fn rng_golden_sequence() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        let sa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let sb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(sa, sb);
        // Frozen from the first run; guards against generator or crate drift.
        assert_eq!(sa[..3], GOLDEN_SEED_42);
        assert_ne!(SeededRng::new(43).next_u64(), sa[0]);
    }

    const GOLDEN_SEED_42: [u64; 3] = [12578764544318200737, 17529487244874322312, 7886285670807131020];

    #[test]
    fn child_streams_differ() {
        let root = SeededRng::new(7);
        let mut c0 = root.child(0);
        let mut c1 = root.child(1);
        assert_ne!(c0.next_u64(), c1.next_u64());
        assert_eq!(root.child(3).next_u64(), root.child(3).next_u64());
    }

    proptest! {
        #[test]
        fn lse_shift_invariant(v in proptest::collection::vec(-50.0f64..50.0, 1..8), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let lhs = log_sum_exp(&shifted).unwrap();
            let rhs = log_sum_exp(&v).unwrap() + c;
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn pairwise_symmetric(data in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let a = DenseMatrix::from_vec(4, 3, data).unwrap();
            let d = pairwise_sq_dists(&a).unwrap();
            for i in 0..4 {
                prop_assert_eq!(d.get(i, i), 0.0);
                for j in 0..4 {
                    prop_assert_eq!(d.get(i, j), d.get(j, i));
                }
            }
        }
    }
}
