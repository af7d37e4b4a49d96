//! Thin sparse-matrix layer over `faer`: triplet assembly, matrix-vector
//! products for cross-step Jacobian blocks, and a direct LU that serves both
//! the forward Newton systems and (via transpose solves) the adjoint sweep.

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

/// Triplet accumulator; duplicate entries sum.
#[derive(Debug, Clone)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if val != 0.0 {
            self.entries.push(Triplet::new(row, col, val));
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `y += A x`
    pub fn matvec_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for t in &self.entries {
            y[t.row] += t.val * x[t.col];
        }
    }

    /// `y += A^T x`
    pub fn matvec_transpose_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for t in &self.entries {
            y[t.col] += t.val * x[t.row];
        }
    }

    pub fn to_col_mat(&self) -> Result<SparseColMat<usize, f64>> {
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &self.entries)
            .map_err(|e| Error::LinearSolve {
                step: usize::MAX,
                detail: format!("sparse assembly failed: {e:?}"),
            })
    }

    /// Dense copy, for small-grid oracle comparisons.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for t in &self.entries {
            m[(t.row, t.col)] += t.val;
        }
        m
    }
}

/// Direct sparse LU factorization of a square system.
pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(triplets: &Triplets, step: usize) -> Result<Self> {
        if triplets.nrows != triplets.ncols {
            return Err(Error::LinearSolve {
                step,
                detail: format!("system not square: {} x {}", triplets.nrows, triplets.ncols),
            });
        }
        let mat = triplets.to_col_mat().map_err(|e| match e {
            Error::LinearSolve { detail, .. } => Error::LinearSolve { step, detail },
            other => other,
        })?;
        let symbolic = SymbolicLu::try_new(mat.symbolic()).map_err(|e| Error::LinearSolve {
            step,
            detail: format!("symbolic LU failed: {e:?}"),
        })?;
        let lu = Lu::try_new_with_symbolic(symbolic, mat.as_ref()).map_err(|e| Error::LinearSolve {
            step,
            detail: format!("numeric LU failed: {e:?}"),
        })?;
        Ok(SparseLu {
            n: triplets.nrows,
            lu,
        })
    }

    fn solve_impl(&self, rhs: &[f64], transpose: bool, step: usize) -> Result<Vec<f64>> {
        debug_assert_eq!(rhs.len(), self.n);
        let mut b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        if transpose {
            self.lu.solve_transpose_in_place(&mut b);
        } else {
            self.lu.solve_in_place(&mut b);
        }
        let out: Vec<f64> = (0..self.n).map(|i| b[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolve {
                step,
                detail: "solution contains non-finite entries (singular system?)".into(),
            });
        }
        Ok(out)
    }

    /// Solve `A x = b`.
    pub fn solve(&self, rhs: &[f64], step: usize) -> Result<Vec<f64>> {
        self.solve_impl(rhs, false, step)
    }

    /// Solve `A^T x = b`; used by the adjoint sweep on the reassembled
    /// forward Jacobian.
    pub fn solve_transpose(&self, rhs: &[f64], step: usize) -> Result<Vec<f64>> {
        self.solve_impl(rhs, true, step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_sum_and_solve() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 1.0); // duplicate sums to 2
        t.push(0, 1, 1.0);
        t.push(1, 1, 3.0);
        let lu = SparseLu::factor(&t, 0).unwrap();
        let x = lu.solve(&[5.0, 6.0], 0).unwrap();
        // [[2,1],[0,3]] x = [5,6] -> x = [1.5, 2]
        assert!((x[0] - 1.5).abs() < 1e-14);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn transpose_solve_matches_dense() {
        let mut t = Triplets::new(3, 3);
        let vals = [
            (0, 0, 4.0),
            (0, 1, 1.0),
            (1, 0, -2.0),
            (1, 1, 5.0),
            (1, 2, 0.5),
            (2, 2, 3.0),
            (2, 0, 1.0),
        ];
        for (r, c, v) in vals {
            t.push(r, c, v);
        }
        let lu = SparseLu::factor(&t, 0).unwrap();
        let b = [1.0, 2.0, 3.0];
        let xt = lu.solve_transpose(&b, 0).unwrap();
        let dense = t.to_dense();
        let sol = dense
            .transpose()
            .lu()
            .solve(&nalgebra::DVector::from_row_slice(&b))
            .unwrap();
        for i in 0..3 {
            assert!((xt[i] - sol[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_and_transpose() {
        let mut t = Triplets::new(2, 3);
        t.push(0, 2, 2.0);
        t.push(1, 0, -1.0);
        let mut y = vec![0.0; 2];
        t.matvec_add(&[1.0, 10.0, 100.0], &mut y);
        assert_eq!(y, vec![200.0, -1.0]);
        let mut z = vec![0.0; 3];
        t.matvec_transpose_add(&[1.0, 1.0], &mut z);
        assert_eq!(z, vec![-1.0, 0.0, 2.0]);
    }
}
