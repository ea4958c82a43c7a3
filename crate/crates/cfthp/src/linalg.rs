//! Dense complex matrices and the LQ factorization kernel.
//!
//! The precoders need only small dense operations (K and N stay in the low
//! hundreds), so the matrix type is a plain row-major `Vec<Complex64>`. The
//! LQ factorization uses modified Gram-Schmidt with one reorthogonalization
//! pass over the rows; linear combinations of rows never touch coordinates
//! that are exactly zero, so structural sparsity of the input (zeroed AP
//! columns) survives the factorization exactly rather than up to rounding.

use num_complex::Complex64;

use crate::{Error, Result};

/// Relative pivot threshold below which a factorization row counts as
/// rank-deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Build from a nested slice of rows; rows must have equal length.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == ncols), "ragged rows");
        Self {
            rows: nrows,
            cols: ncols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Complex64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_col(&mut self, c: usize, v: &[Complex64]) {
        assert_eq!(v.len(), self.rows);
        for (r, &x) in v.iter().enumerate() {
            self[(r, c)] = x;
        }
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    /// Elementwise conjugate.
    pub fn conj(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| self[(r, c)].conj())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| self[(r, c)] * s)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_fn(self.rows, self.cols, |r, c| self[(r, c)] - other[(r, c)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "shape mismatch in matmul");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == Complex64::ZERO {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(r);
                for c in 0..src.len() {
                    dst[c] += a * src[c];
                }
            }
        }
        out
    }

    pub fn mat_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum::<Complex64>()
            })
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Squared Frobenius norm, `Tr(M^H M)`.
    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Dense real matrix, row-major. Used for large-scale gain maps.
#[derive(Debug, Clone, PartialEq)]
pub struct RMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

impl std::ops::Index<(usize, usize)> for RMat {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for RMat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// `⟨x, y⟩ = Σ xᵢ conj(yᵢ)`.
fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a * b.conj()).sum()
}

/// LQ factors of a wide matrix `M = L·Q`.
///
/// `L` is lower triangular with a real nonnegative diagonal and `Q` has
/// orthonormal rows.
#[derive(Debug, Clone)]
pub struct LqFactors {
    pub l_mat: CMat,
    pub q_mat: CMat,
}

impl LqFactors {
    /// Diagonal entry of `L` (real by construction).
    pub fn l_diag(&self, i: usize) -> f64 {
        self.l_mat[(i, i)].re
    }
}

/// Factor a K×N matrix (K ≤ N, full row rank) as `M = L·Q`.
///
/// Modified Gram-Schmidt over the rows with a second orthogonalization
/// pass. The diagonal of `L` comes out as the residual row norms, so it is
/// real and nonnegative without any phase fixup. A pivot below
/// `RANK_TOL · ‖M‖_F` reports the offending row.
pub fn lq_decompose(m: &CMat) -> Result<LqFactors> {
    let (k, n) = (m.rows(), m.cols());
    if k == 0 || n == 0 {
        return Err(Error::invalid("lq_decompose: empty matrix"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "lq_decompose: more rows ({k}) than columns ({n})"
        )));
    }
    let scale = m.frobenius_norm();
    if scale == 0.0 {
        return Err(Error::SingularFactorization { row: 0, pivot: 0.0 });
    }
    let threshold = RANK_TOL * scale;

    let mut l_mat = CMat::zeros(k, k);
    let mut q_mat = CMat::zeros(k, n);
    let mut v = vec![Complex64::ZERO; n];

    for i in 0..k {
        v.copy_from_slice(m.row(i));
        for j in 0..i {
            let c = inner(&v, q_mat.row(j));
            let qj = q_mat.row(j);
            for (ve, &qe) in v.iter_mut().zip(qj) {
                *ve -= c * qe;
            }
            l_mat[(i, j)] = c;
        }
        // Second pass recovers the orthogonality lost to cancellation.
        for j in 0..i {
            let c = inner(&v, q_mat.row(j));
            let qj = q_mat.row(j);
            for (ve, &qe) in v.iter_mut().zip(qj) {
                *ve -= c * qe;
            }
            l_mat[(i, j)] += c;
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < threshold {
            return Err(Error::SingularFactorization {
                row: i,
                pivot: norm,
            });
        }
        l_mat[(i, i)] = Complex64::new(norm, 0.0);
        let inv = 1.0 / norm;
        let qi = q_mat.row_mut(i);
        for (qe, &ve) in qi.iter_mut().zip(v.iter()) {
            *qe = ve * inv;
        }
    }

    Ok(LqFactors { l_mat, q_mat })
}

/// Solve `L·X = B` for lower-triangular `L` by forward substitution.
pub fn solve_lower(l: &CMat, b: &CMat) -> CMat {
    let n = l.rows();
    assert_eq!(l.cols(), n);
    assert_eq!(b.rows(), n);
    let mut x = b.clone();
    for col in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, col)];
            for j in 0..i {
                s -= l[(i, j)] * x[(j, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
    }
    x
}

/// Solve `X·B = C` for lower-triangular `B` (columns eliminated from the
/// right, no explicit inverse).
pub fn solve_right_lower(b: &CMat, c: &CMat) -> CMat {
    let n = b.rows();
    assert_eq!(b.cols(), n);
    assert_eq!(c.cols(), n);
    let mut x = c.clone();
    for row in 0..c.rows() {
        // x[row]·B = c[row]  ⇒  back substitution over columns n-1..0.
        for j in (0..n).rev() {
            let mut s = x[(row, j)];
            for i in (j + 1)..n {
                s -= x[(row, i)] * b[(i, j)];
            }
            x[(row, j)] = s / b[(j, j)];
        }
    }
    x
}

/// Solve `A·X = B` by LU with partial pivoting.
pub fn lu_solve(a: &CMat, b: &CMat) -> Result<CMat> {
    let n = a.rows();
    assert_eq!(a.cols(), n, "lu_solve needs a square matrix");
    assert_eq!(b.rows(), n);
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.frobenius_norm();
    for col in 0..n {
        let (pivot_row, pivot_mag) = (col..n)
            .map(|r| (r, lu[(r, col)].norm()))
            .fold((col, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if pivot_mag <= RANK_TOL * scale {
            return Err(Error::SingularSystem {
                col,
                pivot: pivot_mag,
            });
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = lu[(col, j)];
                lu[(col, j)] = lu[(pivot_row, j)];
                lu[(pivot_row, j)] = tmp;
            }
            for j in 0..x.cols() {
                let tmp = x[(col, j)];
                x[(col, j)] = x[(pivot_row, j)];
                x[(pivot_row, j)] = tmp;
            }
        }
        let inv = Complex64::ONE / lu[(col, col)];
        for r in (col + 1)..n {
            let f = lu[(r, col)] * inv;
            if f == Complex64::ZERO {
                continue;
            }
            lu[(r, col)] = f;
            for j in (col + 1)..n {
                let v = lu[(col, j)];
                lu[(r, j)] -= f * v;
            }
            for j in 0..x.cols() {
                let v = x[(col, j)];
                x[(r, j)] -= f * v;
            }
        }
    }
    // Back substitution on the upper factor.
    for col in 0..x.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, col)];
            for j in (i + 1)..n {
                s -= lu[(i, j)] * x[(j, col)];
            }
            x[(i, col)] = s / lu[(i, i)];
        }
    }
    Ok(x)
}
