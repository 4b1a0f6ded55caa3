//! Dense numerics for the small matrices that appear in joint systems.
//!
//! Everything here works on row-major [`Matrix`] values of modest size
//! (state dimensions up to roughly 16, vectorized operators up to a few
//! hundred unknowns). The symmetric eigensolver is a cyclic Jacobi
//! iteration; least-squares solves use a one-sided Jacobi SVD.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative off-diagonal Frobenius threshold for the Jacobi iteration.
pub const JACOBI_TOLERANCE: f64 = 1e-14;
/// Maximum number of full Jacobi sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative asymmetry accepted by [`sym_eigen`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Most negative eigenvalue that [`matrix_sqrt_psd`] clamps to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Relative eigenvalue cutoff of the normal-equation pseudo-inverse.
pub const PINV_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("Jacobi iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense real matrix stored in row-major order.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// Builds a matrix from a list of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(LinalgError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {ncols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(nrows, ncols, data)
    }

    /// Column vector with the given entries.
    pub fn column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    /// Rebuilds a matrix from its column-stacked vectorization.
    pub fn from_col_major(rows: usize, cols: usize, v: &[f64]) -> Result<Self> {
        if v.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                v.len()
            )));
        }
        let mut m = Self::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m[(r, c)] = v[c * rows + r];
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Column-stacked vectorization, `vec(X)`.
    pub fn vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                v.push(self[(r, c)]);
            }
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(LinalgError::DimensionMismatch(format!(
                "cannot multiply {}x{} by a vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn try_add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn try_sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(M + Mᵀ)/2`.
    pub fn symmetric_part(&self) -> Result<Matrix> {
        self.require_square()?;
        let t = self.transpose();
        self.zip_with(&t, |a, b| 0.5 * (a + b))
    }

    /// `‖M − Mᵀ‖_F / ‖M‖_F` (zero for the zero matrix).
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.frobenius_norm();
        if scale == 0.0 || !self.is_square() {
            return if self.is_square() { 0.0 } else { f64::INFINITY };
        }
        let mut acc = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let d = self[(r, c)] - self[(c, r)];
                acc += d * d;
            }
        }
        acc.sqrt() / scale
    }

    /// `xᵀ M x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        let mx = self.mul_vec(x)?;
        if self.rows != x.len() {
            return Err(LinalgError::DimensionMismatch(
                "quadratic form needs a square matrix".into(),
            ));
        }
        Ok(dot(x, &mx))
    }

    /// Copy of the `nrows x ncols` block whose top-left corner is `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, nrows: usize, ncols: usize) -> Matrix {
        let mut out = Matrix::zeros(nrows, ncols);
        for r in 0..nrows {
            for c in 0..ncols {
                out[(r, c)] = self[(r0 + r, c0 + c)];
            }
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        for r in 0..b.rows {
            for c in 0..b.cols {
                self[(r0 + r, c0 + c)] = b[(r, c)];
            }
        }
    }

    /// Horizontal concatenation; all parts need the same row count.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(LinalgError::DimensionMismatch(
                "hstack parts differ in row count".into(),
            ));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            out.set_block(0, c0, p);
            c0 += p.cols;
        }
        Ok(out)
    }

    /// Vertical concatenation; all parts need the same column count.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if parts.iter().any(|p| p.cols != cols) {
            return Err(LinalgError::DimensionMismatch(
                "vstack parts differ in column count".into(),
            ));
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut r0 = 0;
        for p in parts {
            out.set_block(r0, 0, p);
            r0 += p.rows;
        }
        Ok(out)
    }

    pub fn block_diag(parts: &[&Matrix]) -> Matrix {
        let rows = parts.iter().map(|p| p.rows).sum();
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for p in parts {
            out.set_block(r0, c0, p);
            r0 += p.rows;
            c0 += p.cols;
        }
        out
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows * rhs.rows, self.cols * rhs.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                if a == 0.0 {
                    continue;
                }
                for k in 0..rhs.rows {
                    for l in 0..rhs.cols {
                        out[(i * rhs.rows + k, j * rhs.cols + l)] = a * rhs[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn require_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(LinalgError::NonSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

// Operator forms panic on shape mismatch, like slice indexing. Fallible
// callers use `matmul` / `try_add` / `try_sub`.
impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs).expect("matrix product shape mismatch")
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        self.try_add(rhs).expect("matrix sum shape mismatch")
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        self.try_sub(rhs).expect("matrix difference shape mismatch")
    }
}

impl Neg for &Matrix {
    type Output = Matrix;

    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = LinalgError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, matching `values`.
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `Q f(Λ) Qᵀ`.
    pub fn recompose_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for (k, lam) in self.values.iter().enumerate() {
            let w = f(*lam);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let qi = self.vectors[(i, k)] * w;
                if qi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += qi * self.vectors[(j, k)];
                }
            }
        }
        out
    }
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
pub fn sym_eigen(s: &Matrix) -> Result<SymEigen> {
    s.require_square()?;
    if !s.is_finite() {
        return Err(LinalgError::NonFinite("sym_eigen input"));
    }
    let asym = s.relative_asymmetry();
    if asym > SYMMETRY_TOLERANCE {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let n = s.rows();
    let mut a = s.symmetric_part()?;
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(SymEigen {
            values: vec![0.0; n],
            vectors: v,
        });
    }

    let mut converged = false;
    for sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= JACOBI_TOLERANCE * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Entries below the diagonal resolution are dropped outright
                // once the first few sweeps have done the heavy lifting.
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn);
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > JACOBI_TOLERANCE * scale {
        return Err(LinalgError::NoConvergence(JACOBI_MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                acc += a[(r, c)] * a[(r, c)];
            }
        }
    }
    acc.sqrt()
}

/// Applies `A ← JᵀAJ`, `V ← VJ` for the plane rotation in `(p, q)`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Eigenvalues in `[-1e-10, 0)` are clamped to zero; anything more negative
/// is rejected.
pub fn matrix_sqrt_psd(s: &Matrix) -> Result<Matrix> {
    let eig = sym_eigen(s)?;
    if eig.min() < -PSD_TOLERANCE {
        return Err(LinalgError::NotPsd(eig.min()));
    }
    let r = eig.recompose_with(|l| l.max(0.0).sqrt());
    r.symmetric_part()
}

/// Largest singular value, `sqrt(λ_max(AᵀA))`.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    if !a.is_finite() {
        return Err(LinalgError::NonFinite("spectral_norm input"));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Ok(0.0);
    }
    let gram = if a.cols() <= a.rows() {
        &a.transpose() * a
    } else {
        a * &a.transpose()
    };
    let eig = sym_eigen(&gram.symmetric_part()?)?;
    Ok(eig.max().max(0.0).sqrt())
}

/// Singular value decomposition `A·V = W` with orthogonal columns in `W`;
/// `σⱼ = ‖wⱼ‖`.
#[derive(Debug, Clone)]
pub struct JacobiSvd {
    /// `A·V`, one column per right singular vector.
    pub w: Matrix,
    pub v: Matrix,
    pub singular_values: Vec<f64>,
}

impl JacobiSvd {
    pub fn max_singular_value(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// `Σⱼ (wⱼᵀb / σⱼ²) vⱼ` over `σⱼ > cutoff`.
    pub fn pinv_apply(&self, b: &[f64], cutoff: f64) -> Result<Vec<f64>> {
        if b.len() != self.w.rows() {
            return Err(LinalgError::DimensionMismatch(format!(
                "right-hand side of length {} for {} rows",
                b.len(),
                self.w.rows()
            )));
        }
        let n = self.v.rows();
        let mut x = vec![0.0; n];
        for (j, sigma) in self.singular_values.iter().enumerate() {
            if *sigma <= cutoff || *sigma == 0.0 {
                continue;
            }
            let proj: f64 = (0..self.w.rows()).map(|i| self.w[(i, j)] * b[i]).sum::<f64>() / (sigma * sigma);
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += proj * self.v[(i, j)];
            }
        }
        Ok(x)
    }
}

/// One-sided (Hestenes) Jacobi SVD: rotates column pairs of `A` until they
/// are mutually orthogonal, accumulating the rotations in `V`.
pub fn svd_jacobi(a: &Matrix) -> Result<JacobiSvd> {
    if !a.is_finite() {
        return Err(LinalgError::NonFinite("svd input"));
    }
    let (rows, cols) = a.shape();
    let mut w = a.clone();
    let mut v = Matrix::identity(cols);
    let floor = (f64::EPSILON * a.frobenius_norm()).powi(2);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let (wp, wq) = (w[(i, p)], w[(i, q)]);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if alpha <= floor || beta <= floor || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for i in 0..m.rows() {
                        let (mp, mq) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * mp - s * mq;
                        m[(i, q)] = s * mp + c * mq;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence(JACOBI_MAX_SWEEPS));
    }
    let singular_values = (0..cols)
        .map(|j| (0..rows).map(|i| w[(i, j)] * w[(i, j)]).sum::<f64>().sqrt())
        .collect();
    Ok(JacobiSvd { w, v, singular_values })
}

/// Minimum-norm least-squares solution of `coeff · x = rhs`.
///
/// Uses a one-sided Jacobi SVD with singular values below `PINV_THRESHOLD · σ_max`
/// treated as zero, followed by one refinement pass on the residual.
/// Returns the solution and `‖coeff·x − rhs‖₂`.
pub fn kron_solve_least_squares(coeff: &Matrix, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
    if coeff.rows() != rhs.len() {
        return Err(LinalgError::DimensionMismatch(format!(
            "coefficient has {} rows but right-hand side has {} entries",
            coeff.rows(),
            rhs.len()
        )));
    }
    if !coeff.is_finite() || rhs.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite("least-squares system"));
    }
    let svd = svd_jacobi(coeff)?;
    let cutoff = PINV_THRESHOLD * svd.max_singular_value();
    let solve = |b: &[f64]| -> Result<Vec<f64>> { svd.pinv_apply(b, cutoff) };

    let mut x = solve(rhs)?;
    let r: Vec<f64> = coeff
        .mul_vec(&x)?
        .iter()
        .zip(rhs)
        .map(|(ax, b)| b - ax)
        .collect();
    let dx = solve(&r)?;
    for (xi, d) in x.iter_mut().zip(&dx) {
        *xi += d;
    }
    let residual = residual_norm(coeff, &x, rhs)?;
    Ok((x, residual))
}

pub fn residual_norm(coeff: &Matrix, x: &[f64], rhs: &[f64]) -> Result<f64> {
    let ax = coeff.mul_vec(x)?;
    Ok(ax
        .iter()
        .zip(rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// `exp(M·h)` by scaling and squaring of a degree-8 Taylor polynomial.
pub fn expm_taylor(m: &Matrix, h: f64) -> Result<Matrix> {
    m.require_square()?;
    let n = m.rows();
    let x = m.scale(h);
    let norm1 = (0..n)
        .map(|c| (0..n).map(|r| x[(r, c)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 1.0 / 32.0 {
        (norm1 * 32.0).log2().ceil() as i32
    } else {
        0
    };
    let y = x.scale(0.5f64.powi(squarings));
    let mut term = Matrix::identity(n);
    let mut sum = Matrix::identity(n);
    for k in 1..=8 {
        term = (&term * &y).scale(1.0 / k as f64);
        sum = &sum + &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Ok(sum)
}

/// Spectral-radius estimate from `‖Eᵏ‖^(1/k)` with `k = 2⁶⁰`, computed by
/// normalized repeated squaring. Returns `ln ρ(E)`.
pub fn log_spectral_radius(e: &Matrix) -> Result<f64> {
    e.require_square()?;
    let mut nrm = e.frobenius_norm();
    if nrm == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let mut cur = e.scale(1.0 / nrm);
    let mut log_norm = nrm.ln();
    let mut power = 1.0f64;
    for _ in 0..60 {
        let sq = &cur * &cur;
        nrm = sq.frobenius_norm();
        if nrm == 0.0 || !nrm.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        log_norm = 2.0 * log_norm + nrm.ln();
        power *= 2.0;
        cur = sq.scale(1.0 / nrm);
    }
    Ok(log_norm / power)
}

/// Estimate of `max Re λ(M)` via the spectral radius of `exp(M·h)`.
///
/// The Gelfand estimate approaches `ρ` from above, so the returned value
/// never understates the largest real part by more than rounding.
pub fn max_real_part_estimate(m: &Matrix, h: f64) -> Result<f64> {
    let e = expm_taylor(m, h)?;
    Ok(log_spectral_radius(&e)? / h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn eigen_identity() {
        let e = sym_eigen(&Matrix::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
        assert!((&e.vectors - &Matrix::identity(2)).frobenius_norm() < 1e-15);
    }

    #[test]
    fn eigen_two_by_two() {
        let e = sym_eigen(&m(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_diagonal_sorted() {
        let e = sym_eigen(&Matrix::from_diag(&[5.0, -1.0, 0.0])).unwrap();
        assert_eq!(e.values, vec![-1.0, 0.0, 5.0]);
    }

    #[test]
    fn eigen_rejects_bad_input() {
        assert!(matches!(
            sym_eigen(&Matrix::zeros(2, 3)),
            Err(LinalgError::NonSquare { .. })
        ));
        assert!(matches!(
            sym_eigen(&m(&[&[1.0, 2.0], &[0.0, 1.0]])),
            Err(LinalgError::NotSymmetric(_))
        ));
    }

    #[test]
    fn sqrt_cases() {
        let r = matrix_sqrt_psd(&Matrix::identity(4)).unwrap();
        assert!((&r - &Matrix::identity(4)).frobenius_norm() < 1e-14);
        let r = matrix_sqrt_psd(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!((&r - &Matrix::from_diag(&[2.0, 3.0])).frobenius_norm() < 1e-14);
        let s = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let r = matrix_sqrt_psd(&s).unwrap();
        assert!((&(&r * &r) - &s).frobenius_norm() <= 1e-9 * s.frobenius_norm());
        assert!(matches!(
            matrix_sqrt_psd(&Matrix::from_diag(&[1.0, -1e-3])),
            Err(LinalgError::NotPsd(_))
        ));
        // tiny negative eigenvalues are clamped
        assert!(matrix_sqrt_psd(&Matrix::from_diag(&[1.0, -1e-12])).is_ok());
    }

    #[test]
    fn spectral_norm_cases() {
        assert!((spectral_norm(&Matrix::identity(3)).unwrap() - 1.0).abs() < 1e-14);
        assert!((spectral_norm(&Matrix::from_diag(&[3.0, -7.0])).unwrap() - 7.0).abs() < 1e-14);
        assert!((spectral_norm(&m(&[&[0.0, 2.0], &[0.0, 0.0]])).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn least_squares_cases() {
        let (x, r) = kron_solve_least_squares(&Matrix::identity(2), &[1.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        assert!(r < 1e-14);

        let (x, r) = kron_solve_least_squares(&m(&[&[1.0, 0.0], &[0.0, 0.0]]), &[3.0, 4.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-14 && x[1].abs() < 1e-14);
        assert!((r - 4.0).abs() < 1e-12);

        let (x, r) = kron_solve_least_squares(&m(&[&[1.0], &[1.0]]), &[1.0, 3.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-12);

        assert!(matches!(
            kron_solve_least_squares(&Matrix::identity(2), &[1.0]),
            Err(LinalgError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn vec_round_trip_and_kron_identity() {
        // vec(AXB) = (Bᵀ ⊗ A) vec(X)
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0], &[0.5, -1.0]]);
        let x = m(&[&[0.3, -0.7, 1.1], &[2.0, 0.1, -0.4]]);
        let b = m(&[&[1.0, 0.0], &[2.0, -1.0], &[0.0, 3.0]]);
        let lhs = (&(&a * &x) * &b).vec();
        let rhs = b.transpose().kron(&a).mul_vec(&x.vec()).unwrap();
        for (l, r) in lhs.iter().zip(&rhs) {
            assert!((l - r).abs() < 1e-13);
        }
        let back = Matrix::from_col_major(2, 3, &x.vec()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn expm_and_real_part() {
        let e = expm_taylor(&Matrix::from_diag(&[-1.0, 2.0]), 0.5).unwrap();
        assert!((e[(0, 0)] - (-0.5f64).exp()).abs() < 1e-12);
        assert!((e[(1, 1)] - 1f64.exp()).abs() < 1e-12);
        // Jordan block at -4.5
        let j = m(&[&[-4.5, 1.0], &[0.0, -4.5]]);
        let re = max_real_part_estimate(&j, 0.01).unwrap();
        assert!((re + 4.5).abs() < 1e-6, "{re}");
        // rotation-dominated pair -4 ± 5i
        let r = m(&[&[1.0, 1.0], &[-50.0, -9.0]]);
        let re = max_real_part_estimate(&r, 0.01).unwrap();
        assert!((re + 4.0).abs() < 1e-6, "{re}");
    }

    #[test]
    fn large_random_symmetric_converges() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 64;
        let g = Matrix::new(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let s = (&g + &g.transpose()).scale(0.5);
        let e = sym_eigen(&s).unwrap();
        let rec = e.recompose_with(|l| l);
        assert!((&rec - &s).frobenius_norm() <= 1e-10 * (1.0 + s.frobenius_norm()));
    }
}
