//! Error measures, statistics and the a-priori bound of the best approximation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::lowdim::Representation;
use crate::mor::PodResult;
use crate::scalar::{from_usize, lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Mor,
    BestApprox,
    /// Any other pair, e.g. two full-order solutions.
    Comparison,
}

impl ErrorKind {
    pub fn label(self) -> &'static str {
        match self {
            ErrorKind::Mor => "mor",
            ErrorKind::BestApprox => "best_approx",
            ErrorKind::Comparison => "comparison",
        }
    }
}

/// Pointwise-in-time `L2(Pi, rho)` distance between two representations.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport<T: Real> {
    pub times: Vec<T>,
    pub l2_errors: Vec<T>,
    pub max_error: T,
    pub r: Option<usize>,
    pub kind: ErrorKind,
}

impl<T: Real> ErrorReport<T> {
    pub fn new(times: Vec<T>, l2_errors: Vec<T>, r: Option<usize>, kind: ErrorKind) -> Self {
        let max_error = l2_errors.iter().fold(T::zero(), |a, &b| a.max(b));
        ErrorReport {
            times,
            l2_errors,
            max_error,
            r,
            kind,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,l2_error")?;
        for (t, e) in self.times.iter().zip(&self.l2_errors) {
            writeln!(out, "{:e},{:e}", to_f64(*t), to_f64(*e))?;
        }
        Ok(())
    }
}

/// By orthonormality of the basis the `L2(Pi, rho)` distance equals the
/// Euclidean distance of the Phi-coordinates.
pub fn l2_error<T: Real>(
    a: &Representation<T>,
    b: &Representation<T>,
    r: Option<usize>,
    kind: ErrorKind,
) -> Result<ErrorReport<T>> {
    if a.times() != b.times() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} time points",
            a.times().len(),
            b.times().len()
        )));
    }
    let (wa, wb) = (a.phi_coordinates(), b.phi_coordinates());
    if wa.nrows() != wb.nrows() {
        return Err(Error::Dimension(format!(
            "{} vs {} basis coefficients",
            wa.nrows(),
            wb.nrows()
        )));
    }
    let diff = wa - wb;
    let errors = diff.column_iter().map(|c| c.norm()).collect();
    Ok(ErrorReport::new(a.times().to_vec(), errors, r, kind))
}

/// Expected value and standard deviation over time.
#[derive(Debug, Clone, PartialEq)]
pub struct Statistics<T: Real> {
    pub times: Vec<T>,
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Statistics<T> {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,mean,std")?;
        for j in 0..self.times.len() {
            writeln!(
                out,
                "{:e},{:e},{:e}",
                to_f64(self.times[j]),
                to_f64(self.mean[j]),
                to_f64(self.std[j])
            )?;
        }
        Ok(())
    }
}

/// Mean is the coefficient of the constant basis function, the standard
/// deviation the norm of the remaining coefficients.
pub fn statistics<T: Real>(rep: &Representation<T>) -> Statistics<T> {
    let w = rep.phi_coordinates();
    let mean = w.row(0).iter().copied().collect();
    let std = w.column_iter().map(|c| c.rows(1, c.len() - 1).norm()).collect();
    Statistics {
        times: rep.times().to_vec(),
        mean,
        std,
    }
}

/// Terms of `||C||_2 (sigma_{r+1} + sqrt(N) dt max ||v'||_inf)`.
///
/// `deriv_inf` is a finite-difference estimate from the snapshots, so
/// `bound_value` is an estimate as well.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub r: usize,
    pub sigma_next: f64,
    pub c_norm: f64,
    pub dt_max: f64,
    pub deriv_inf: f64,
    pub state_dim: usize,
    pub bound_value: f64,
}

impl BoundReport {
    pub fn csv_header() -> &'static str {
        "r,sigma_next,c_norm,dt_max,deriv_inf_estimate,state_dim,bound_estimate"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{},{:e}",
            self.r, self.sigma_next, self.c_norm, self.dt_max, self.deriv_inf, self.state_dim, self.bound_value
        )
    }
}

/// Derivative estimate at every snapshot: three-point central differences on
/// the (possibly nonuniform) grid inside, one-sided at both ends.
pub fn snapshot_derivatives<T: Real>(snapshots: &DMatrix<T>, times: &[T]) -> Result<DMatrix<T>> {
    let l = snapshots.ncols();
    if times.len() != l {
        return Err(Error::Dimension(format!("{} times for {} snapshots", times.len(), l)));
    }
    let mut out = DMatrix::zeros(snapshots.nrows(), l);
    if l < 2 {
        return Ok(out);
    }
    let col = |j: usize| snapshots.column(j).into_owned();
    out.set_column(0, &((col(1) - col(0)) / (times[1] - times[0])));
    out.set_column(l - 1, &((col(l - 1) - col(l - 2)) / (times[l - 1] - times[l - 2])));
    for j in 1..l - 1 {
        let h0 = times[j] - times[j - 1];
        let h1 = times[j + 1] - times[j];
        let d: DVector<T> = col(j - 1) * (-h1 / (h0 * (h0 + h1)))
            + col(j) * ((h1 - h0) / (h0 * h1))
            + col(j + 1) * (h0 / (h1 * (h0 + h1)));
        out.set_column(j, &d);
    }
    Ok(out)
}

/// The bound for reduced dimension `r`, from the POD of `snapshots`
/// taken at `times` and the output matrix `c_hat` of one output.
pub fn theorem_bound<T: Real>(
    pod: &PodResult<T>,
    c_hat: &DMatrix<T>,
    snapshots: &DMatrix<T>,
    times: &[T],
    r: usize,
) -> Result<BoundReport> {
    let l = snapshots.ncols();
    if l <= r {
        return Err(Error::InvalidArgument(format!(
            "need more than r={r} snapshots, have {l}"
        )));
    }
    if c_hat.ncols() != snapshots.nrows() {
        return Err(Error::Dimension(format!(
            "output matrix has {} columns, snapshots {} rows",
            c_hat.ncols(),
            snapshots.nrows()
        )));
    }
    let deriv = snapshot_derivatives(snapshots, times)?;
    let deriv_inf = to_f64(deriv.amax());
    let dt_max = times.windows(2).map(|w| to_f64(w[1] - w[0])).fold(0.0, f64::max);
    let c_norm = to_f64(spectral_norm(c_hat, lit::<T>(1e-10), 500));
    let sigma_next = to_f64(pod.sigma_next(r));
    let n = snapshots.nrows();
    let root_n = to_f64(from_usize::<T>(n).sqrt());
    Ok(BoundReport {
        r,
        sigma_next,
        c_norm,
        dt_max,
        deriv_inf,
        state_dim: n,
        bound_value: c_norm * (sigma_next + root_n * dt_max * deriv_inf),
    })
}
