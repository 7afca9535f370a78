//! Small dense linear algebra used by the GP layer.
//!
//! The posterior only ever needs a lower-triangular factor that grows one row
//! at a time, so the factor is stored packed by rows: row `i` holds `i + 1`
//! entries. Appending a row is a forward solve against the existing factor.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self.data[i * self.cols + i] += v;
        }
    }
}

/// Raised when a pivot is not strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`, stored packed by rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cholesky {
    n: usize,
    packed: Vec<f64>,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Cholesky {
    pub fn empty() -> Self {
        Cholesky::default()
    }

    /// Factorizes a symmetric matrix; only the lower triangle is read.
    pub fn factor(a: &Matrix) -> std::result::Result<Self, NotPositiveDefinite> {
        assert!(a.is_square(), "cholesky of a non-square matrix");
        let mut chol = Cholesky {
            n: 0,
            packed: Vec::with_capacity(row_start(a.rows())),
        };
        let mut off = Vec::with_capacity(a.rows());
        for i in 0..a.rows() {
            off.clear();
            off.extend((0..i).map(|j| a.get(i, j)));
            chol.push_row(&off, a.get(i, i))?;
        }
        Ok(chol)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.packed[row_start(i)..row_start(i + 1)]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.packed[row_start(i + 1) - 1]
    }

    /// Computes the row that `push_row` would append without mutating.
    /// Returns the off-diagonal part `l = L⁻¹ a` and the new pivot.
    pub fn extension(&self, off_diag: &[f64], diag: f64) -> std::result::Result<(Vec<f64>, f64), NotPositiveDefinite> {
        debug_assert_eq!(off_diag.len(), self.n);
        let l = self.solve_lower(off_diag);
        let d2 = diag - dot(&l, &l);
        if !(d2 > 0.0) || !d2.is_finite() {
            return Err(NotPositiveDefinite {
                row: self.n,
                pivot: d2,
            });
        }
        Ok((l, d2.sqrt()))
    }

    /// Extends the factor by one row/column of the factorized matrix.
    /// `off_diag` holds `A[n, 0..n]` and `diag` holds `A[n, n]`.
    pub fn push_row(&mut self, off_diag: &[f64], diag: f64) -> std::result::Result<(), NotPositiveDefinite> {
        let (l, d) = self.extension(off_diag, diag)?;
        self.push_solved_row(&l, d);
        Ok(())
    }

    pub(crate) fn push_solved_row(&mut self, l: &[f64], pivot: f64) {
        debug_assert_eq!(l.len(), self.n);
        self.packed.extend_from_slice(l);
        self.packed.push(pivot);
        self.n += 1;
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side has wrong length");
        let mut x = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let s = dot(&row[..i], &x);
            x.push((b[i] - s) / row[i]);
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side has wrong length");
        let mut x = b.to_vec();
        for i in (0..self.n).rev() {
            x[i] /= self.diag(i);
            let xi = x[i];
            let row = self.row(i);
            for j in 0..i {
                x[j] -= row[j] * xi;
            }
        }
        x
    }

    /// Solves `A x = b` with `A = L Lᵀ`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.diag(i).ln()).sum()
    }

    /// Dense copy of `L`.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| if j <= i { self.row(i)[j] } else { 0.0 })
    }
}

/// Diagonal jitter tried in order when a factorization fails.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Factorizes `a + jitter I` with the smallest ladder jitter that succeeds.
pub fn factor_with_jitter(a: &Matrix) -> Result<(Cholesky, f64)> {
    let mut last = None;
    for &jitter in JITTER_LADDER.iter() {
        let mut m = a.clone();
        m.add_diagonal(jitter);
        match Cholesky::factor(&m) {
            Ok(c) => return Ok((c, jitter)),
            Err(e) => last = Some(e),
        }
    }
    let e = last.expect("ladder is nonempty");
    let (lo, hi) = diagonal_range(a);
    Err(Error::numerical(format!(
        "matrix of order {} not positive definite after jitter 1e-4 (pivot {:.3e} at row {}, diagonal range [{:.3e}, {:.3e}])",
        a.rows(),
        e.pivot,
        e.row,
        lo,
        hi
    )))
}

fn diagonal_range(a: &Matrix) -> (f64, f64) {
    (0..a.rows())
        .map(|i| a.get(i, i))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}
