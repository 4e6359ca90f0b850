//! Dense row-major matrices, additive masks, activation functions, rank
//! selection and a seeded generator.
//!
//! Every reduction sums left to right in `f64`, and transcendental functions go
//! through `libm`, so results are bit-identical across platforms.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Additive mask value for blocked positions. Finite so mask arithmetic never
/// produces NaN.
pub const NEG_INF: f64 = -1e30;

/// Dense 2-D matrix of `f64`, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input; meant
    /// for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// A single-row matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Matrix product with the inner index summed in ascending order.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(shape_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (n, inner, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * m..(i + 1) * m];
            // i-k-j order keeps the per-entry accumulation order k ascending.
            for (k, &a) in a_row.iter().enumerate().take(inner) {
                let b_row = &other.data[k * m..(k + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(shape_err(format!(
                "add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Adds `bias` to every row.
    pub fn add_row_broadcast(&self, bias: &[f64]) -> Result<Matrix> {
        if bias.len() != self.cols {
            return Err(shape_err(format!(
                "bias of length {} for {} columns",
                bias.len(),
                self.cols
            )));
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (v, b) in out.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Copies the rectangular block `rows × cols`.
    pub fn slice(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), cols.len());
        for (oi, r) in rows.enumerate() {
            out.row_mut(oi)
                .copy_from_slice(&self.row(r)[cols.start..cols.end]);
        }
        out
    }

    /// Copies a contiguous range of columns.
    pub fn columns(&self, cols: std::ops::Range<usize>) -> Matrix {
        self.slice(0..self.rows, cols)
    }

    /// Stacks matrices with equal column counts top to bottom.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(shape_err(format!("vstack {} vs {} columns", p.cols, cols)));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Concatenates matrices with equal row counts left to right.
    pub fn hstack(parts: &[Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(shape_err("hstack with unequal row counts"));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                out.row_mut(r)[offset..offset + p.cols].copy_from_slice(p.row(r));
                offset += p.cols;
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Additive attention mask: every entry is `0.0` or [`NEG_INF`].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix(Matrix);

impl MaskMatrix {
    /// All positions visible.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(Matrix::zeros(rows, cols))
    }

    pub fn causal(seq_len: usize) -> Self {
        let mut m = Matrix::zeros(seq_len, seq_len);
        for i in 0..seq_len {
            for j in i + 1..seq_len {
                m.set(i, j, NEG_INF);
            }
        }
        Self(m)
    }

    pub fn block(&mut self, r: usize, c: usize) {
        self.0.set(r, c, NEG_INF);
    }

    #[inline]
    pub fn is_blocked(&self, r: usize, c: usize) -> bool {
        self.0.get(r, c) == NEG_INF
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn blocked_count(&self) -> usize {
        self.0.data.iter().filter(|&&v| v == NEG_INF).count()
    }
}

/// Row-wise softmax of `scores + mask`. Masked positions come out as exactly
/// `0.0`.
pub fn softmax_rows(scores: &Matrix, mask: &MaskMatrix) -> Result<Matrix> {
    if scores.shape() != mask.0.shape() {
        return Err(shape_err(format!(
            "scores {:?} vs mask {:?}",
            scores.shape(),
            mask.0.shape()
        )));
    }
    let cols = scores.cols;
    let mut out = Matrix::zeros(scores.rows, cols);
    for r in 0..scores.rows {
        let s = scores.row(r);
        let m = mask.0.row(r);
        let mut row_max = f64::NEG_INFINITY;
        for (&sv, &mv) in s.iter().zip(m) {
            if mv != NEG_INF {
                row_max = row_max.max(sv + mv);
            }
        }
        if row_max == f64::NEG_INFINITY {
            return Err(Error::DegenerateRow { row: r });
        }
        let o = out.row_mut(r);
        let mut total = 0.0;
        for j in 0..cols {
            if m[j] != NEG_INF {
                let e = libm::exp(s[j] + m[j] - row_max);
                o[j] = e;
                total += e;
            }
        }
        for v in o.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

fn ranked_indices(values: &[f64], count: usize, descending: bool) -> Result<Vec<usize>> {
    if count > values.len() {
        return Err(Error::InvalidCount {
            requested: count,
            available: values.len(),
        });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let by_value = if descending {
            values[b].total_cmp(&values[a])
        } else {
            values[a].total_cmp(&values[b])
        };
        by_value.then(a.cmp(&b))
    });
    let mut picked = order[..count].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// The `count` indices with the smallest values, ties to the lower index,
/// returned ascending.
pub fn lowest_rank_indices(values: &[f64], count: usize) -> Result<Vec<usize>> {
    ranked_indices(values, count, false)
}

/// The `count` indices with the largest values, ties to the lower index,
/// returned ascending.
pub fn top_rank_indices(values: &[f64], count: usize) -> Result<Vec<usize>> {
    ranked_indices(values, count, true)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).fold(0.0, |acc, (a, b)| acc + a * b)
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(shape_err(format!("cosine of lengths {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Exact GELU, `x·Φ(x)` with the error-function form of Φ.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu(x: &Matrix) -> Matrix {
    x.map(gelu_scalar)
}

/// SplitMix64 generator: `state += 0x9E3779B97F4A7C15`, then the standard
/// three-step mix. Platform independent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, state: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)`.
    pub fn next_below(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    /// Standard normal draw via Box-Muller (cosine branch only).
    pub fn next_normal(&mut self) -> f64 {
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    /// Derives an independent stream, e.g. one per layer or per stage.
    pub fn fork(&mut self, tag: u64) -> Rng {
        Rng::new(self.next_u64() ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
    }
}

/// `rows × cols` matrix of independent `N(0, std²)` draws.
pub fn gaussian_init(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    assert!(std > 0.0, "gaussian_init needs std > 0");
    let data = (0..rows * cols).map(|_| rng.next_normal() * std).collect();
    Matrix { rows, cols, data }
}

/// Total order helper for sorting floats.
pub fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_projector() {
        let b = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(Matrix::identity(2).matmul(&b).unwrap(), b);
        let p = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        let c = Matrix::from_rows(&[[5.0, 6.0], [7.0, 8.0]]);
        assert_eq!(
            p.matmul(&c).unwrap(),
            Matrix::from_rows(&[[5.0, 6.0], [0.0, 0.0]])
        );
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = gaussian_init(&mut rng, 17, 9, 1.0);
        let b = gaussian_init(&mut rng, 9, 5, 1.0);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&triple_loop(&a, &b)) <= 1e-12);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn softmax_closed_forms() {
        let z = MaskMatrix::zeros(1, 2);
        let out = softmax_rows(&Matrix::row_vector(&[0.0, 0.0]), &z).unwrap();
        assert_eq!(out.row(0), &[0.5, 0.5]);

        let out = softmax_rows(&Matrix::row_vector(&[std::f64::consts::LN_2, 0.0]), &z).unwrap();
        assert!((out.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((out.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_masked_entry_is_exact_zero() {
        let mut mask = MaskMatrix::zeros(1, 3);
        mask.block(0, 1);
        let out = softmax_rows(&Matrix::row_vector(&[5.0, 1.0, 3.0]), &mask).unwrap();
        // Direct evaluation: e^5 / (e^5 + e^3) = e^2 / (e^2 + 1).
        let e2 = 2.0f64.exp();
        assert!((out.get(0, 0) - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((out.get(0, 0) - 0.8807970779778823).abs() < 1e-12);
        assert_eq!(out.get(0, 1).to_bits(), 0.0f64.to_bits());
        assert!((out.get(0, 2) - 0.11920292202211755).abs() < 1e-12);
    }

    #[test]
    fn softmax_fully_masked_row_errors() {
        let mut mask = MaskMatrix::zeros(2, 2);
        mask.block(1, 0);
        mask.block(1, 1);
        assert!(matches!(
            softmax_rows(&Matrix::zeros(2, 2), &mask),
            Err(Error::DegenerateRow { row: 1 })
        ));
    }

    #[test]
    fn rank_selection_examples() {
        assert_eq!(lowest_rank_indices(&[0.1, 0.4, 0.2, 0.3], 2).unwrap(), vec![0, 2]);
        assert!(lowest_rank_indices(&[0.3, 0.1], 0).unwrap().is_empty());
        assert_eq!(lowest_rank_indices(&[0.2, 0.2, 0.2], 1).unwrap(), vec![0]);
        assert_eq!(top_rank_indices(&[0.3, 0.2, 0.1], 2).unwrap(), vec![0, 1]);
        assert_eq!(top_rank_indices(&[0.2, 0.2, 0.2], 1).unwrap(), vec![0]);
        assert!(matches!(
            top_rank_indices(&[0.1], 2),
            Err(Error::InvalidCount { requested: 2, available: 1 })
        ));
    }

    #[test]
    fn top_rank_matches_full_sort() {
        let mut rng = Rng::new(5);
        let v: Vec<f64> = (0..100).map(|_| rng.next_f64()).collect();
        let mut sorted: Vec<(f64, usize)> = v.iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for count in [0, 1, 17, 50, 100] {
            let mut expect: Vec<usize> = sorted[..count].iter().map(|p| p.1).collect();
            expect.sort_unstable();
            assert_eq!(top_rank_indices(&v, count).unwrap(), expect);
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        for x in [8.0, 9.5, 20.0] {
            assert!((gelu_scalar(x) - x).abs() <= 1e-9);
        }
        // Phi(1) = 0.841344746068542948585... (high-precision reference).
        assert!((gelu_scalar(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn gaussian_init_determinism_and_spread() {
        let a = gaussian_init(&mut Rng::new(3), 4, 5, 0.02);
        let b = gaussian_init(&mut Rng::new(3), 4, 5, 0.02);
        assert!(a.bit_eq(&b));
        let c = gaussian_init(&mut Rng::new(4), 4, 5, 0.02);
        assert!(!a.bit_eq(&c));

        let big = gaussian_init(&mut Rng::new(99), 1, 100_000, 0.02);
        let n = big.data().len() as f64;
        let mean = big.data().iter().sum::<f64>() / n;
        let var = big.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 0.02).abs() / 0.02 < 0.02);
    }

    #[test]
    fn causal_mask_shape() {
        let m = MaskMatrix::causal(3);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.is_blocked(i, j), j > i);
            }
        }
        assert_eq!(MaskMatrix::causal(5).blocked_count(), 10);
    }

    fn finite_matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
        (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-10.0f64..10.0, r * c)
                .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matmul_by_identity_is_bit_exact(a in finite_matrix(6)) {
            let id = Matrix::identity(a.cols());
            prop_assert!(a.matmul(&id).unwrap().bit_eq(&a));
        }

        #[test]
        fn softmax_rows_are_distributions(
            s in finite_matrix(7),
            blocks in proptest::collection::vec((0usize..7, 0usize..7), 0..10),
        ) {
            let mut mask = MaskMatrix::zeros(s.rows(), s.cols());
            for (r, c) in blocks {
                // keep column 0 open so no row degenerates
                if r < s.rows() && c < s.cols() && c > 0 {
                    mask.block(r, c);
                }
            }
            let p = softmax_rows(&s, &mask).unwrap();
            for r in 0..p.rows() {
                let sum: f64 = p.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9);
                for c in 0..p.cols() {
                    prop_assert!(p.get(r, c) >= 0.0);
                    if mask.is_blocked(r, c) {
                        prop_assert_eq!(p.get(r, c), 0.0);
                    }
                }
            }
        }

        #[test]
        fn distinct_values_partition(v in proptest::collection::hash_set(0u32..10_000, 1..40), frac in 0.0f64..=1.0) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let n = v.len();
            let c = ((n as f64) * frac) as usize;
            let mut all = lowest_rank_indices(&v, c).unwrap();
            all.extend(top_rank_indices(&v, n - c).unwrap());
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in proptest::collection::vec(-5.0f64..5.0, 4),
            v in proptest::collection::vec(-5.0f64..5.0, 4),
            a in 0.1f64..10.0,
            b in 0.1f64..10.0,
        ) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let c = cosine_similarity(&u, &v).unwrap();
            prop_assert!((c - cosine_similarity(&v, &u).unwrap()).abs() < 1e-12);
            let su: Vec<f64> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * b).collect();
            prop_assert!((c - cosine_similarity(&su, &sv).unwrap()).abs() < 1e-12);
        }
    }
}
