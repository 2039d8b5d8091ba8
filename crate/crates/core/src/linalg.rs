//! Dense double-precision kernels and SPD test-matrix generators.
//!
//! All reductions run in a fixed left-to-right order so that identical
//! inputs produce bit-identical outputs. Fault-injection experiments rely
//! on that to replay a run exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{op}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("vectors and matrices must have at least one entry")]
    Empty,
    #[error("storage length {len} does not match {rows}x{cols}")]
    BadShape { rows: usize, cols: usize, len: usize },
    #[error("invalid spectrum: eigenvalue {index} is {value}, must be finite and > 0")]
    InvalidSpectrum { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// A dense vector of `f64` with at least one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(LinalgError::Empty);
        }
        Ok(Self { data })
    }

    /// # Panics
    /// Panics if `n == 0`.
    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "DenseVector::zeros requires n >= 1");
        Self { data: vec![0.0; n] }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        assert!(n > 0, "DenseVector::filled requires n >= 1");
        Self { data: vec![value; n] }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty);
        }
        if data.len() != rows * cols {
            return Err(LinalgError::BadShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(LinalgError::DimensionMismatch {
                    op: "from_rows",
                    expected: n_cols,
                    found: rows[i].len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(n_rows, n_cols, data)
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "DenseMatrix::identity requires n >= 1");
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest `|A[i,j] - A[j,i]|`; infinite for non-square matrices.
    pub fn max_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Running count of mathematical flops (one multiply plus one add per
/// matrix entry in a gemv).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCounter {
    total: u64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn total(&self) -> u64 {
        self.total
    }

    #[inline]
    pub fn add(&mut self, flops: u64) {
        self.total += flops;
    }
}

fn check_len(op: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(LinalgError::DimensionMismatch { op, expected, found });
    }
    Ok(())
}

/// `out = A·v`, writing into a caller-provided buffer.
pub fn gemv_into(a: &DenseMatrix, v: &DenseVector, out: &mut DenseVector, flops: &mut FlopCounter) -> Result<()> {
    check_len("gemv", a.cols, v.len())?;
    check_len("gemv", a.rows, out.len())?;
    let x = v.as_slice();
    for (i, slot) in out.as_mut_slice().iter_mut().enumerate() {
        let mut acc = 0.0;
        for (aij, xj) in a.row(i).iter().zip(x) {
            acc += aij * xj;
        }
        *slot = acc;
    }
    flops.add(2 * (a.rows as u64) * (a.cols as u64));
    Ok(())
}

/// Matrix-vector product. Advances `flops` by `2·rows·cols`.
pub fn gemv(a: &DenseMatrix, v: &DenseVector, flops: &mut FlopCounter) -> Result<DenseVector> {
    check_len("gemv", a.cols, v.len())?;
    let mut out = DenseVector::zeros(a.rows);
    gemv_into(a, v, &mut out, flops)?;
    Ok(out)
}

pub fn dot(u: &DenseVector, v: &DenseVector) -> Result<f64> {
    check_len("dot", u.len(), v.len())?;
    Ok(dot_unchecked(u.as_slice(), v.as_slice()))
}

#[inline]
pub(crate) fn dot_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in u.iter().zip(v) {
        acc += a * b;
    }
    acc
}

/// Returns `y + alpha·x`.
pub fn axpy(alpha: f64, x: &DenseVector, y: &DenseVector) -> Result<DenseVector> {
    let mut out = y.clone();
    axpy_in_place(alpha, x, &mut out)?;
    Ok(out)
}

/// `y ← y + alpha·x`.
pub fn axpy_in_place(alpha: f64, x: &DenseVector, y: &mut DenseVector) -> Result<()> {
    check_len("axpy", x.len(), y.len())?;
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += alpha * xi;
    }
    Ok(())
}

pub fn norm2(v: &DenseVector) -> f64 {
    dot_unchecked(v.as_slice(), v.as_slice()).sqrt()
}

/// Symmetric, strictly diagonally dominant matrix with positive diagonal.
///
/// Off-diagonals are drawn uniformly from `[0, 1)` over the upper triangle
/// in row-major order and mirrored; `A[i,i] = Σ_{j≠i} |A[i,j]| + 1`.
pub fn gen_spd_diag_dominant(n: usize, seed: u64) -> DenseMatrix {
    assert!(n > 0, "gen_spd_diag_dominant requires n >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = rng.gen();
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                off += data[i * n + j].abs();
            }
        }
        data[i * n + i] = off + 1.0;
    }
    DenseMatrix { rows: n, cols: n, data }
}

/// SPD matrix `Qᵀ·diag(λ)·Q` where `Q` is a product of `n` random
/// Householder reflections.
pub fn gen_spd_spectrum(eigenvalues: &DenseVector, seed: u64) -> Result<DenseMatrix> {
    for (index, &value) in eigenvalues.as_slice().iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(LinalgError::InvalidSpectrum { index, value });
        }
    }
    let n = eigenvalues.len();
    let mut m = vec![0.0; n * n];
    for (i, &lambda) in eigenvalues.as_slice().iter().enumerate() {
        m[i * n + i] = lambda;
    }
    if n == 1 {
        return DenseMatrix::from_row_major(1, 1, m);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    for _ in 0..n {
        // Unit reflector direction; redraw the (practically impossible) zero vector.
        let norm = loop {
            for vi in v.iter_mut() {
                *vi = rng.gen_range(-1.0..1.0);
            }
            let norm = dot_unchecked(&v, &v).sqrt();
            if norm > 1e-8 {
                break norm;
            }
        };
        v.iter_mut().for_each(|vi| *vi /= norm);

        // H·M·H with H = I - 2vvᵀ:  M - 2v(Mv)ᵀ - 2(Mv)vᵀ + 4(vᵀMv)vvᵀ
        for i in 0..n {
            w[i] = dot_unchecked(&m[i * n..(i + 1) * n], &v);
        }
        let s = dot_unchecked(&v, &w);
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] += -2.0 * v[i] * w[j] - 2.0 * w[i] * v[j] + 4.0 * s * v[i] * v[j];
            }
        }
    }

    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    DenseMatrix::from_row_major(n, n, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecf(v: &[f64]) -> DenseVector {
        DenseVector::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn gemv_identity_and_hand_case() {
        let mut f = FlopCounter::new();
        let y = gemv(&DenseMatrix::identity(3), &vecf(&[1.0, 2.0, 3.0]), &mut f).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(f.total(), 18);

        let a = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let y = gemv(&a, &vecf(&[1.0, 2.0]), &mut f).unwrap();
        assert_eq!(y.as_slice(), &[6.0, 7.0]);
        assert_eq!(f.total(), 18 + 8);

        let z = gemv(&a, &DenseVector::zeros(2), &mut f).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn gemv_dimension_mismatch() {
        let mut f = FlopCounter::new();
        let err = gemv(&DenseMatrix::identity(3), &vecf(&[1.0, 2.0]), &mut f).unwrap_err();
        assert!(matches!(err, LinalgError::DimensionMismatch { op: "gemv", .. }));
        assert_eq!(f.total(), 0);
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&vecf(&[1.0, 0.0]), &vecf(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(dot(&vecf(&[1.0, 2.0, 3.0]), &vecf(&[4.0, 5.0, 6.0])).unwrap(), 32.0);
        let v = vecf(&[3.0, 4.0]);
        assert_eq!(dot(&v, &v).unwrap(), 25.0);
        assert!(dot(&v, &vecf(&[1.0])).is_err());
    }

    #[test]
    fn axpy_examples() {
        let y = vecf(&[0.0, 2.0]);
        assert_eq!(axpy(0.0, &vecf(&[9.0, 9.0]), &y).unwrap(), y);
        assert_eq!(axpy(1.0, &vecf(&[1.0, 1.0]), &y).unwrap().as_slice(), &[1.0, 3.0]);
        assert_eq!(
            axpy(-2.0, &vecf(&[1.0, 2.0]), &vecf(&[2.0, 4.0])).unwrap().as_slice(),
            &[0.0, 0.0]
        );
        assert!(axpy(1.0, &vecf(&[1.0]), &y).is_err());
    }

    #[test]
    fn norm2_examples() {
        assert_eq!(norm2(&vecf(&[3.0, 4.0])), 5.0);
        assert_eq!(norm2(&DenseVector::zeros(4)), 0.0);
        assert_eq!(norm2(&vecf(&[1.0, 1.0, 1.0, 1.0])), 2.0);
    }

    #[test]
    fn empty_shapes_rejected() {
        assert_eq!(DenseVector::from_vec(vec![]), Err(LinalgError::Empty));
        assert!(DenseMatrix::from_row_major(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn diag_dominant_small_and_deterministic() {
        let a = gen_spd_diag_dominant(1, 42);
        assert_eq!(a.as_slice(), &[1.0]);

        let a = gen_spd_diag_dominant(16, 5);
        let b = gen_spd_diag_dominant(16, 5);
        assert_eq!(a, b);
        assert_eq!(a.max_asymmetry(), 0.0);
        for i in 0..16 {
            let off: f64 = (0..16).filter(|&j| j != i).map(|j| a.get(i, j).abs()).sum();
            assert!(a.get(i, i) > off);
        }
        assert_ne!(a, gen_spd_diag_dominant(16, 6));
    }

    #[test]
    fn spectrum_identity_is_identity() {
        let a = gen_spd_spectrum(&DenseVector::filled(6, 1.0), 11).unwrap();
        let eye = DenseMatrix::identity(6);
        for (x, y) in a.as_slice().iter().zip(eye.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(a.max_asymmetry() < 1e-12);
    }

    #[test]
    fn spectrum_rejects_non_positive() {
        let err = gen_spd_spectrum(&vecf(&[1.0, 0.0]), 1).unwrap_err();
        assert_eq!(err, LinalgError::InvalidSpectrum { index: 1, value: 0.0 });
        assert!(gen_spd_spectrum(&vecf(&[-2.0]), 1).is_err());
    }
}
