//! Interface shared by the assembled full-order models.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::timeint::ImplicitSystem;
use crate::Real;

/// Coupled system `E v' = A v + F(v) + B u(t)` with output coefficients
/// `w = C v`, where `w` stacks the expansion coefficients of every output:
/// entry `i * n_out + o` is the coefficient of basis function `i` for output `o`.
pub trait FullOrderModel<T: Real>: ImplicitSystem<T> {
    /// Number of basis functions `m`.
    fn basis_len(&self) -> usize;

    fn n_out(&self) -> usize;

    fn n_in(&self) -> usize;

    fn is_dae(&self) -> bool;

    /// The `m n_out x N` output matrix.
    fn output_matrix(&self) -> &DMatrix<T>;

    fn initial_state(&self) -> &DVector<T>;

    fn input(&self, t: T) -> DVector<T>;

    /// `(T^T E T, T^T A T, T^T B)` for a projection matrix `T` (`N x r`).
    fn project_linear(&self, t_r: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>);

    /// The nonlinear part `F(v)` alone.
    fn nonlinear(&self, v: &DVector<T>) -> Result<DVector<T>>;

    fn has_nonlinearity(&self) -> bool;

    /// `T^T dF/dv(v) T`.
    fn project_nonlinear_jacobian(&self, v: &DVector<T>, t_r: &DMatrix<T>) -> Result<DMatrix<T>>;

    /// Rows `i * n_out + o` of the output matrix for output `o`, as an `m x N` matrix.
    fn output_rows(&self, o: usize) -> DMatrix<T> {
        select_output_rows(self.output_matrix(), self.n_out(), o)
    }
}

pub(crate) fn select_output_rows<T: Real>(c: &DMatrix<T>, n_out: usize, o: usize) -> DMatrix<T> {
    let m = c.nrows() / n_out;
    DMatrix::from_fn(m, c.ncols(), |i, j| c[(i * n_out + o, j)])
}

/// Splits stacked output coefficients into one `m`-vector per output.
pub fn split_outputs<T: Real>(w: &DVector<T>, n_out: usize) -> Vec<DVector<T>> {
    let m = w.len() / n_out;
    (0..n_out)
        .map(|o| DVector::from_fn(m, |i, _| w[i * n_out + o]))
        .collect()
}
