//! Dense row-major matrices and the regularized least-squares kernels the
//! learners are built on: ridge fits, inverse correlation matrices, and the
//! Woodbury rank-N update of an inverse correlation matrix.
//!
//! Everything here is `f64`. Symmetric positive definite systems are solved
//! through a Cholesky factorization; no routine forms an explicit inverse
//! except [`inverse_correlation`], whose output *is* the inverse.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Relative pivot floor for the Cholesky factorization. A pivot below
/// `PIVOT_RTOL * max_diag` is treated as a loss of positive definiteness.
const PIVOT_RTOL: f64 = 1e-13;

/// Absolute symmetry tolerance accepted by [`solve_spd`], scaled by
/// `1 + max|lhs|`.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("singular system in {0}")]
    SingularSystem(&'static str),
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn mismatch(op: &'static str, expected: impl Into<String>, found: impl Into<String>) -> LinalgError {
    LinalgError::DimensionMismatch {
        op,
        expected: expected.into(),
        found: found.into(),
    }
}

/// Row-major `rows × cols` matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from a row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(mismatch(
                "from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals and tests.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.cols != rhs.rows {
            return Err(mismatch(
                "matmul",
                format!("rhs with {} rows", self.cols),
                format!("{}x{}", rhs.rows, rhs.cols),
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.rows != rhs.rows {
            return Err(mismatch(
                "t_matmul",
                format!("rhs with {} rows", self.rows),
                format!("{}x{}", rhs.rows, rhs.cols),
            ));
        }
        let mut out = Self::zeros(self.cols, rhs.cols);
        for n in 0..self.rows {
            let lhs_row = &self.data[n * self.cols..(n + 1) * self.cols];
            let rhs_row = &rhs.data[n * rhs.cols..(n + 1) * rhs.cols];
            for (i, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.cols != rhs.cols {
            return Err(mismatch(
                "matmul_t",
                format!("rhs with {} cols", self.cols),
                format!("{}x{}", rhs.rows, rhs.cols),
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                let b = rhs.row(j);
                out.data[i * rhs.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    /// `XᵀX`, exactly symmetric.
    pub fn gram(&self) -> Self {
        let d = self.cols;
        let mut out = Self::zeros(d, d);
        for n in 0..self.rows {
            let r = self.row(n);
            for i in 0..d {
                let a = r[i];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out.data[i * d + i..(i + 1) * d].iter_mut().zip(&r[i..]) {
                    *o += a * b;
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                out.data[i * d + j] = out.data[j * d + i];
            }
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, LinalgError> {
        self.zip_with("add", rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, LinalgError> {
        self.zip_with("sub", rhs, |a, b| a - b)
    }

    fn zip_with(&self, op: &'static str, rhs: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, LinalgError> {
        if self.shape() != rhs.shape() {
            return Err(mismatch(
                op,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", rhs.rows, rhs.cols),
            ));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds `s` to every diagonal entry in place.
    pub fn add_diagonal(&mut self, s: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest elementwise absolute difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `max |A - Aᵀ|`; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    /// Replaces `A` by `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        debug_assert!(self.is_square());
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    /// Appends `extra` zero columns on the right.
    pub fn pad_cols(&self, extra: usize) -> Self {
        self.resized(self.rows, self.cols + extra)
    }

    /// Appends `extra` zero rows at the bottom.
    pub fn pad_rows(&self, extra: usize) -> Self {
        self.resized(self.rows + extra, self.cols)
    }

    /// Copies into a larger zero matrix, keeping the top-left block.
    pub fn resized(&self, rows: usize, cols: usize) -> Self {
        assert!(rows >= self.rows && cols >= self.cols, "resized may only grow");
        let mut out = Self::zeros(rows, cols);
        for i in 0..self.rows {
            out.data[i * cols..i * cols + self.cols].copy_from_slice(self.row(i));
        }
        out
    }

    /// `[[self, 0], [0, other]]`.
    pub fn block_diag(&self, other: &Self) -> Self {
        let mut out = self.resized(self.rows + other.rows, self.cols + other.cols);
        let cols = out.cols;
        for i in 0..other.rows {
            let start = (self.rows + i) * cols + self.cols;
            out.data[start..start + other.cols].copy_from_slice(other.row(i));
        }
        out
    }

    /// Stacks `blocks` vertically; all must share a column count.
    pub fn vstack(blocks: &[&Self]) -> Result<Self, LinalgError> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for b in blocks {
            if b.cols != cols {
                return Err(mismatch("vstack", format!("{cols} cols"), format!("{} cols", b.cols)));
            }
            rows += b.rows;
            data.extend_from_slice(&b.data);
        }
        Ok(Self { rows, cols, data })
    }

    /// Selects the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Selects the given columns, in order.
    pub fn select_cols(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let shown: Vec<String> = self.row(i).iter().take(8).map(|v| format!("{v:.6}")).collect();
            let more = if self.cols > 8 { ", ..." } else { "" };
            writeln!(f, "  [{}{}]", shown.join(", "), more)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    factor: DenseMatrix,
}

impl Cholesky {
    pub fn new(a: &DenseMatrix) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(mismatch("cholesky", "square matrix", format!("{}x{}", a.rows, a.cols)));
        }
        let n = a.rows;
        let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(a[(i, i)].abs()));
        let floor = PIVOT_RTOL * max_diag.max(f64::MIN_POSITIVE);
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > floor) {
                return Err(LinalgError::NotPositiveDefinite { index: j, pivot: diag });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    s -= l.data[ri + k] * l.data[rj + k];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { factor: l })
    }

    pub fn factor(&self) -> &DenseMatrix {
        &self.factor
    }

    /// Solves `A X = B` by forward then backward substitution.
    pub fn solve(&self, rhs: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        let n = self.factor.rows;
        if rhs.rows != n {
            return Err(mismatch("cholesky_solve", format!("{n} rows"), format!("{} rows", rhs.rows)));
        }
        let l = &self.factor;
        let k = rhs.cols;
        let mut x = rhs.clone();
        // L Y = B
        for i in 0..n {
            for p in 0..i {
                let lip = l[(i, p)];
                if lip == 0.0 {
                    continue;
                }
                for c in 0..k {
                    x.data[i * k + c] -= lip * x.data[p * k + c];
                }
            }
            let lii = l[(i, i)];
            for c in 0..k {
                x.data[i * k + c] /= lii;
            }
        }
        // Lᵀ X = Y
        for i in (0..n).rev() {
            for p in (i + 1)..n {
                let lpi = l[(p, i)];
                if lpi == 0.0 {
                    continue;
                }
                for c in 0..k {
                    x.data[i * k + c] -= lpi * x.data[p * k + c];
                }
            }
            let lii = l[(i, i)];
            for c in 0..k {
                x.data[i * k + c] /= lii;
            }
        }
        Ok(x)
    }
}

/// Solves `lhs · S = rhs` for symmetric positive definite `lhs`.
pub fn solve_spd(lhs: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if !lhs.is_square() {
        return Err(mismatch("solve_spd", "square lhs", format!("{}x{}", lhs.rows, lhs.cols)));
    }
    if rhs.rows != lhs.rows {
        return Err(mismatch(
            "solve_spd",
            format!("rhs with {} rows", lhs.rows),
            format!("{}x{}", rhs.rows, rhs.cols),
        ));
    }
    let asym = lhs.asymmetry();
    if asym > SYMMETRY_TOL * (1.0 + lhs.max_abs()) {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let out = Cholesky::new(lhs)?.solve(rhs)?;
    if !out.is_finite() {
        return Err(LinalgError::NonFinite("solve_spd"));
    }
    Ok(out)
}

/// Regularized least-squares problem `min ‖targets − inputs·W‖²_F + lambda‖W‖²_F`.
#[derive(Debug, Clone)]
pub struct RidgeProblem<'a> {
    inputs: &'a DenseMatrix,
    targets: &'a DenseMatrix,
    lambda: f64,
}

impl<'a> RidgeProblem<'a> {
    pub fn new(inputs: &'a DenseMatrix, targets: &'a DenseMatrix, lambda: f64) -> Result<Self, LinalgError> {
        if inputs.rows != targets.rows {
            return Err(mismatch(
                "ridge_problem",
                format!("targets with {} rows", inputs.rows),
                format!("{} rows", targets.rows),
            ));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(LinalgError::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { inputs, targets, lambda })
    }

    pub fn inputs(&self) -> &DenseMatrix {
        self.inputs
    }

    pub fn targets(&self) -> &DenseMatrix {
        self.targets
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Closed-form ridge solution `W = (XᵀX + λI)⁻¹ XᵀC`.
pub fn ridge_fit(problem: &RidgeProblem<'_>) -> Result<DenseMatrix, LinalgError> {
    let x = problem.inputs;
    let d = x.cols;
    if problem.lambda == 0.0 && d > x.rows {
        return Err(LinalgError::SingularSystem("ridge_fit"));
    }
    let mut normal = x.gram();
    normal.add_diagonal(problem.lambda);
    let xtc = x.t_matmul(problem.targets)?;
    match solve_spd(&normal, &xtc) {
        Ok(w) => Ok(w),
        Err(LinalgError::NotPositiveDefinite { .. }) | Err(LinalgError::NonFinite(_)) => {
            Err(LinalgError::SingularSystem("ridge_fit"))
        }
        Err(e) => Err(e),
    }
}

/// `R = (XᵀX + λI)⁻¹`, symmetrized.
pub fn inverse_correlation(inputs: &DenseMatrix, lambda: f64) -> Result<DenseMatrix, LinalgError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(LinalgError::InvalidArgument(format!("lambda must be finite and > 0, got {lambda}")));
    }
    let d = inputs.cols;
    let mut normal = inputs.gram();
    normal.add_diagonal(lambda);
    let mut r = solve_spd(&normal, &DenseMatrix::identity(d))?;
    r.symmetrize();
    Ok(r)
}

/// Folds a batch of new rows `Z` into an inverse correlation matrix:
/// `R' = R − R Zᵀ (I + Z R Zᵀ)⁻¹ Z R`, i.e. `(R⁻¹ + ZᵀZ)⁻¹`.
///
/// The `N × N` inner system is factored, not inverted. The result is
/// re-symmetrized.
pub fn woodbury_update(prev: &DenseMatrix, new_inputs: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if !prev.is_square() {
        return Err(mismatch("woodbury_update", "square R", format!("{}x{}", prev.rows, prev.cols)));
    }
    if new_inputs.cols != prev.rows {
        return Err(mismatch(
            "woodbury_update",
            format!("inputs with {} cols", prev.rows),
            format!("{}x{}", new_inputs.rows, new_inputs.cols),
        ));
    }
    if new_inputs.rows == 0 {
        return Ok(prev.clone());
    }
    // Z R (N×d); R symmetric so R Zᵀ = (Z R)ᵀ.
    let zr = new_inputs.matmul(prev)?;
    let mut inner = zr.matmul_t(new_inputs)?;
    inner.symmetrize();
    inner.add_diagonal(1.0);
    let k = match Cholesky::new(&inner) {
        Ok(ch) => ch.solve(&zr)?,
        Err(_) => return Err(LinalgError::SingularSystem("woodbury_update")),
    };
    let correction = zr.t_matmul(&k)?;
    let mut out = prev.sub(&correction)?;
    out.symmetrize();
    if !out.is_finite() {
        return Err(LinalgError::NonFinite("woodbury_update"));
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Gauss-Jordan inversion with partial pivoting. Independent of the
    //! Cholesky path; used only to produce expected values in tests.
    use super::DenseMatrix;

    pub fn invert(a: &DenseMatrix) -> DenseMatrix {
        let n = a.rows();
        let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
        let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())
                .unwrap();
            m.swap(col, piv);
            inv.swap(col, piv);
            let p = m[col][col];
            assert!(p.abs() > 1e-300, "oracle: singular");
            for j in 0..n {
                m[col][j] /= p;
                inv[col][j] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = m[r][col];
                    for j in 0..n {
                        m[r][j] -= f * m[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
        DenseMatrix::from_rows(&inv)
    }

    pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum())
    }

    /// `(XᵀX + λI)⁻¹ XᵀC` through explicit inversion.
    pub fn ridge(x: &DenseMatrix, c: &DenseMatrix, lambda: f64) -> DenseMatrix {
        let xt = x.transpose();
        let mut normal = naive_matmul(&xt, x);
        for i in 0..normal.rows() {
            normal[(i, i)] += lambda;
        }
        naive_matmul(&invert(&normal), &naive_matmul(&xt, c))
    }
}
