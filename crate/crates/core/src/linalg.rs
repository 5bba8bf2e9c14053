//! Small dense linear algebra helpers shared by the Gaussian and LQT code.
//!
//! Every inverse of a symmetric positive-definite matrix goes through a
//! Cholesky factorization; nothing here calls a general-purpose inverse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::{lit, Real};

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = lit::<T>(0.5);
    (m + m.transpose()) * half
}

pub fn all_finite<T: Real>(m: &DMatrix<T>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn all_finite_vec<T: Real>(v: &DVector<T>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn cholesky<T: Real>(m: &DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("{what}: matrix is not square")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Inverse of a symmetric positive-definite matrix, symmetrized on output.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    let chol = cholesky(m, what)?;
    Ok(symmetrize(&chol.inverse()))
}

/// `log det` of an SPD matrix from its Cholesky factor.
pub fn chol_log_det<T: Real>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    let two = lit::<T>(2.0);
    (0..l.nrows()).fold(T::zero(), |acc, i| acc + two * l[(i, i)].ln())
}

/// Multiplies a block-diagonal matrix (given by its square diagonal blocks)
/// with a dense matrix whose row count equals the total block size.
pub fn block_diag_mul<T: Real>(blocks: &[DMatrix<T>], m: &DMatrix<T>) -> DMatrix<T> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    let mut row = 0;
    for b in blocks {
        let n = b.nrows();
        let prod = b * m.rows(row, n);
        out.rows_mut(row, n).copy_from(&prod);
        row += n;
    }
    debug_assert_eq!(row, m.nrows());
    out
}

/// Assembles a dense block-diagonal matrix.
pub fn block_diag<T: Real>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((at, at), (k, k)).copy_from(b);
        at += k;
    }
    out
}

pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}
