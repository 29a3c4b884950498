//! Dense and block-diagonal system matrices with matching factorizations.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::scalar::{eps, lit, Real};

/// Matrix appearing in an implicit system: mass matrix or Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemMatrix<T: Real> {
    Dense(DMatrix<T>),
    /// Square blocks along the diagonal, all of the same size.
    BlockDiagonal(Vec<DMatrix<T>>),
}

impl<T: Real> SystemMatrix<T> {
    pub fn identity(n: usize) -> Self {
        SystemMatrix::Dense(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        match self {
            SystemMatrix::Dense(m) => m.nrows(),
            SystemMatrix::BlockDiagonal(blocks) => blocks.iter().map(|b| b.nrows()).sum(),
        }
    }

    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            SystemMatrix::Dense(m) => m * x,
            SystemMatrix::BlockDiagonal(blocks) => {
                let mut out = DVector::zeros(x.len());
                let mut offset = 0;
                for b in blocks {
                    let n = b.nrows();
                    let y = b * x.rows(offset, n);
                    out.rows_mut(offset, n).copy_from(&y);
                    offset += n;
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        match self {
            SystemMatrix::Dense(m) => m.clone(),
            SystemMatrix::BlockDiagonal(blocks) => {
                let n = self.dim();
                let mut out = DMatrix::zeros(n, n);
                let mut offset = 0;
                for b in blocks {
                    let k = b.nrows();
                    out.view_mut((offset, offset), (k, k)).copy_from(b);
                    offset += k;
                }
                out
            }
        }
    }

    /// `alpha * self + beta * other`, keeping block structure when both share it.
    pub fn combine(&self, alpha: T, other: &SystemMatrix<T>, beta: T) -> SystemMatrix<T> {
        match (self, other) {
            (SystemMatrix::BlockDiagonal(a), SystemMatrix::BlockDiagonal(b))
                if a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape()) =>
            {
                SystemMatrix::BlockDiagonal(a.iter().zip(b).map(|(x, y)| x * alpha + y * beta).collect())
            }
            _ => SystemMatrix::Dense(self.to_dense() * alpha + other.to_dense() * beta),
        }
    }

    pub fn factor(&self) -> Result<Factorization<T>> {
        match self {
            SystemMatrix::Dense(m) => Ok(Factorization::Dense(checked_lu(m.clone())?)),
            SystemMatrix::BlockDiagonal(blocks) => Ok(Factorization::Blocks(
                blocks.iter().map(|b| checked_lu(b.clone())).collect::<Result<_>>()?,
            )),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            SystemMatrix::Dense(m) => m.iter().all(|v| v.is_finite()),
            SystemMatrix::BlockDiagonal(blocks) => blocks.iter().flatten().all(|v| v.is_finite()),
        }
    }
}

fn checked_lu<T: Real>(m: DMatrix<T>) -> Result<LU<T, Dyn, Dyn>> {
    let lu = LU::new(m);
    if !lu.is_invertible() {
        return Err(Error::Singular("LU factorization hit a zero pivot".into()));
    }
    Ok(lu)
}

/// LU factorization of a [`SystemMatrix`].
#[derive(Debug, Clone)]
pub enum Factorization<T: Real> {
    Dense(LU<T, Dyn, Dyn>),
    Blocks(Vec<LU<T, Dyn, Dyn>>),
}

impl<T: Real> Factorization<T> {
    pub fn solve(&self, b: &DVector<T>) -> Result<DVector<T>> {
        let out = match self {
            Factorization::Dense(lu) => lu.solve(b).ok_or_else(|| Error::Singular("dense solve".into()))?,
            Factorization::Blocks(lus) => {
                let mut out = DVector::zeros(b.len());
                let mut offset = 0;
                for lu in lus {
                    let n = lu.l().nrows();
                    let x = lu
                        .solve(&b.rows(offset, n).into_owned())
                        .ok_or_else(|| Error::Singular("block solve".into()))?;
                    out.rows_mut(offset, n).copy_from(&x);
                    offset += n;
                }
                out
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "linear solve".into(),
            });
        }
        Ok(out)
    }
}

/// Spectral norm by power iteration on `M^T M`.
///
/// Stops once the Rayleigh quotient changes by less than `tol` relative.
pub fn spectral_norm<T: Real>(m: &DMatrix<T>, tol: T, max_iter: usize) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let n = m.ncols();
    // deterministic, generic start vector with no zero components
    let mut v = DVector::from_fn(n, |i, _| T::one() + lit::<T>(0.1) * lit::<T>((i % 7) as f64));
    v.normalize_mut();
    let mut estimate = T::zero();
    for _ in 0..max_iter {
        let w = m.transpose() * (m * &v);
        let norm = w.norm();
        if norm == T::zero() {
            return T::zero();
        }
        let next = norm.sqrt();
        v = w / norm;
        if (next - estimate).abs() <= tol * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Orthonormal bases of the left and right null spaces of a square matrix,
/// as columns. Singular values below `rel_tol * sigma_max` count as zero.
pub fn null_spaces<T: Real>(m: &DMatrix<T>, rel_tol: T) -> (DMatrix<T>, DMatrix<T>) {
    let n = m.nrows();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let sigma_max = svd.singular_values.max();
    let threshold = (rel_tol * sigma_max).max(eps::<T>());
    let zero: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= threshold).collect();
    let left = DMatrix::from_fn(n, zero.len(), |r, c| u[(r, zero[c])]);
    let right = DMatrix::from_fn(n, zero.len(), |r, c| v_t[(zero[c], r)]);
    (left, right)
}
