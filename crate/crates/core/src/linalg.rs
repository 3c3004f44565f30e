//! Sparse storage and the small set of factorizations the solvers need.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Compressed-sparse-column sparsity pattern (rows sorted within a column).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SparsityPattern {
    pub fn new(nrows: usize, ncols: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>) -> Result<Self> {
        if col_ptr.len() != ncols + 1 || col_ptr[0] != 0 || col_ptr[ncols] != row_idx.len() {
            return Err(Error::Shape("inconsistent CSC column pointers".into()));
        }
        for c in 0..ncols {
            let rows = &row_idx[col_ptr[c]..col_ptr[c + 1]];
            if rows.windows(2).any(|w| w[0] >= w[1]) || rows.iter().any(|&r| r >= nrows) {
                return Err(Error::Shape(format!("column {c} has unsorted or out-of-range rows")));
            }
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
        })
    }

    /// Builds a pattern from per-column row sets.
    pub fn from_columns(nrows: usize, columns: Vec<Vec<usize>>) -> Result<Self> {
        let ncols = columns.len();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut rows in columns {
            rows.sort_unstable();
            rows.dedup();
            row_idx.extend(rows);
            col_ptr.push(row_idx.len());
        }
        Self::new(nrows, ncols, col_ptr, row_idx)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    /// Slot of entry `(row, col)`, if it is in the pattern.
    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        if col >= self.ncols {
            return None;
        }
        let (a, b) = (self.col_ptr[col], self.col_ptr[col + 1]);
        self.row_idx[a..b].binary_search(&row).ok().map(|k| a + k)
    }

    /// `(row, col)` of a nonzero slot.
    pub fn entry(&self, slot: usize) -> Option<(usize, usize)> {
        if slot >= self.nnz() {
            return None;
        }
        let col = self.col_ptr.partition_point(|&p| p <= slot) - 1;
        Some((self.row_idx[slot], col))
    }

    /// Maximum `|row - col|` over the lower and upper triangle.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for c in 0..self.ncols {
            for &r in &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]] {
                if r > c {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        (kl, ku)
    }

    pub fn approx_bytes(&self) -> usize {
        (self.col_ptr.len() + self.row_idx.len()) * std::mem::size_of::<usize>()
    }
}

/// A single sparse matrix sharing a (possibly shared) pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn new(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::Argument(format!(
                "{} values for a pattern with {} nonzeros",
                values.len(),
                pattern.nnz()
            )));
        }
        Ok(Self { pattern, values })
    }

    pub fn identity(n: usize) -> Self {
        let pattern = SparsityPattern::new(n, n, (0..=n).collect(), (0..n).collect())
            .expect("identity pattern");
        Self {
            pattern: Arc::new(pattern),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let columns = (0..m.ncols())
            .map(|c| (0..m.nrows()).filter(|&r| m[(r, c)] != 0.0).collect())
            .collect();
        let pattern = SparsityPattern::from_columns(m.nrows(), columns).expect("dense pattern");
        let values = (0..m.ncols())
            .flat_map(|c| {
                let p = &pattern;
                (p.col_ptr[c]..p.col_ptr[c + 1]).map(move |k| m[(p.row_idx[k], c)])
            })
            .collect();
        Self {
            pattern: Arc::new(pattern),
            values,
        }
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.slot(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = &self.pattern;
        let mut m = DMatrix::zeros(p.nrows, p.ncols);
        for c in 0..p.ncols {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                m[(p.row_idx[k], c)] = self.values[k];
            }
        }
        m
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        y.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..p.ncols {
            let xc = x[c];
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                y[p.row_idx[k]] += self.values[k] * xc;
            }
        }
    }

    /// `A B` for a dense `B`.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let y = self.mul_vec(b.column(j).as_slice());
            out.column_mut(j).copy_from_slice(&y);
        }
        out
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let p = &self.pattern;
        let mut acc = 0.0;
        for c in 0..p.ncols {
            let mut col = 0.0;
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                col += self.values[k] * x[p.row_idx[k]];
            }
            acc += col * x[c];
        }
        acc
    }

    pub fn band_lu(&self) -> Result<BandLu> {
        BandLu::factor(self)
    }
}

/// Banded LU factorization with partial pivoting (LAPACK `gbtf2` layout).
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &CscMatrix) -> Result<Self> {
        Self::factor_parts(&a.pattern, &a.values)
    }

    /// Factors the matrix with pattern `p` and nonzero values `values`.
    pub fn factor_parts(p: &SparsityPattern, values: &[f64]) -> Result<Self> {
        let n = p.nrows();
        if p.ncols() != n || values.len() != p.nnz() {
            return Err(Error::Shape(format!(
                "band LU of a {}x{} matrix with {} values",
                n,
                p.ncols(),
                values.len()
            )));
        }
        let (kl, ku) = p.bandwidths();
        let kv = kl + ku;
        let ld = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ld * n];
        for c in 0..n {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                let r = p.row_idx[k];
                ab[kv + r - c + c * ld] = values[k];
            }
        }
        let mut ipiv = vec![0; n];
        let mut ju = 0;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ld + kv;
            let mut jp = 0;
            let mut best = ab[col].abs();
            for i in 1..=km {
                let v = ab[col + i].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 || !best.is_finite() {
                return Err(Error::LinearSolve(format!("zero pivot in column {j}")));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    ab.swap(kv + j - c + c * ld, kv + j + jp - c + c * ld);
                }
            }
            if km > 0 {
                let piv = ab[col];
                for i in 1..=km {
                    ab[col + i] /= piv;
                }
                for c in (j + 1)..=ju {
                    let ajc = ab[kv + j - c + c * ld];
                    if ajc != 0.0 {
                        for i in 1..=km {
                            ab[kv + j + i - c + c * ld] -= ab[col + i] * ajc;
                        }
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, ab, ipiv })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, kv) = (self.n, self.kl, self.kl + self.ku);
        let ld = 2 * self.kl + self.ku + 1;
        for j in 0..n {
            b.swap(j, self.ipiv[j]);
            let bj = b[j];
            if bj != 0.0 {
                for i in 1..=kl.min(n - 1 - j) {
                    b[j + i] -= self.ab[kv + i + j * ld] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.ab[kv + j * ld];
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= self.ab[kv + i - j + j * ld] * bj;
                }
            }
        }
    }
}

/// Upper Cholesky factor `H` with `X = H^T H`; fails if `X` is not SPD.
pub fn upper_cholesky(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != x.ncols() {
        return Err(Error::Shape("Cholesky of a non-square matrix".into()));
    }
    let asym = (x - x.transpose()).amax();
    if asym > 1e-10 * x.amax().max(1.0) {
        return Err(Error::Cholesky(format!("matrix is not symmetric (asymmetry {asym:e})")));
    }
    let chol = nalgebra::Cholesky::new(x.clone())
        .ok_or_else(|| Error::Cholesky("matrix is not positive definite".into()))?;
    Ok(chol.l().transpose())
}

/// Solves `H Y = B` for upper-triangular `H`.
pub fn solve_upper(h: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    h.solve_upper_triangular(b)
        .ok_or_else(|| Error::LinearSolve("singular triangular factor".into()))
}

/// `kron(a, b)` with the right factor acting on the fast index.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `vec(B X A^T)` = `kron(A, B) vec(X)` for `X` of shape `B.ncols() x A.ncols()`.
pub fn kron_apply(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let xm = DMatrix::from_column_slice(b.ncols(), a.ncols(), x);
    let y = b * xm * a.transpose();
    y.as_slice().to_vec()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Flips each column so that its largest-magnitude entry (first on ties) is positive.
pub fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}
