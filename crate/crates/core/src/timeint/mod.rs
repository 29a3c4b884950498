//! Adaptive implicit time integration of `M x' = f(t, x)` with constant mass
//! matrix `M`.
//!
//! Two schemes are provided: the trapezoidal rule for systems with a regular
//! mass matrix and variable-order, variable-step BDF for index-1 DAEs. Both use
//! mixed absolute/relative local error control and produce a [`Trajectory`]
//! with piecewise cubic Hermite dense output.

mod bdf;
mod newton;
mod trajectory;
mod trapezoidal;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{null_spaces, SystemMatrix};
use crate::scalar::{eps, lit, to_f64, Real};

pub use trajectory::{uniform_grid, Trajectory};

/// Implicit first-order system `M x' = f(t, x)`.
pub trait ImplicitSystem<T: Real>: Sync {
    fn dim(&self) -> usize;

    fn mass(&self) -> &SystemMatrix<T>;

    fn rhs(&self, t: T, x: &DVector<T>) -> Result<DVector<T>>;

    /// Jacobian `df/dx`. Falls back to forward differences.
    fn jacobian(&self, t: T, x: &DVector<T>) -> Result<SystemMatrix<T>> {
        finite_difference_jacobian(self, t, x)
    }
}

pub fn finite_difference_jacobian<T: Real, S: ImplicitSystem<T> + ?Sized>(
    sys: &S,
    t: T,
    x: &DVector<T>,
) -> Result<SystemMatrix<T>> {
    let n = sys.dim();
    let f0 = sys.rhs(t, x)?;
    let sqrt_eps = T::default_epsilon().sqrt();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = sqrt_eps * x[j].abs().max(T::one());
        xp[j] = x[j] + h;
        let fj = sys.rhs(t, &xp)?;
        xp[j] = x[j];
        jac.set_column(j, &((fj - &f0) / h));
    }
    Ok(SystemMatrix::Dense(jac))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Trapezoidal,
    Bdf,
}

/// Local error estimator of the trapezoidal rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrapezoidalEstimate {
    /// Difference to a backward-Euler step sharing the end point.
    BackwardEuler,
    /// `h^3/12 |x'''|` with `x'''` from divided differences of stored derivatives.
    #[default]
    ThirdDerivative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Highest BDF order, 1 to 5.
    pub max_order: usize,
    /// Run BDF at `max_order` once enough history exists, without order selection.
    pub fixed_order: bool,
    pub initial_step: Option<f64>,
    pub min_step: Option<f64>,
    pub max_step: Option<f64>,
    /// Newton stops once the weighted increment, scaled by the contraction
    /// estimate, drops below this fraction of the error tolerance.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub max_steps: usize,
    pub trapezoidal_estimate: TrapezoidalEstimate,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Trapezoidal,
            rel_tol: 1e-4,
            abs_tol: 1e-6,
            max_order: 5,
            fixed_order: false,
            initial_step: None,
            min_step: None,
            max_step: None,
            newton_tol: 0.03,
            newton_max_iter: 8,
            max_steps: 200_000,
            trapezoidal_estimate: TrapezoidalEstimate::default(),
        }
    }
}

impl IntegratorConfig {
    pub fn trapezoidal(rel_tol: f64, abs_tol: f64) -> Self {
        IntegratorConfig {
            method: Method::Trapezoidal,
            rel_tol,
            abs_tol,
            ..Default::default()
        }
    }

    pub fn bdf(rel_tol: f64, abs_tol: f64) -> Self {
        IntegratorConfig {
            method: Method::Bdf,
            rel_tol,
            abs_tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(1..=5).contains(&self.max_order) {
            return Err(Error::InvalidArgument("max_order must lie in [1, 5]".into()));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::InvalidArgument("invalid newton settings".into()));
        }
        for (name, v) in [
            ("initial_step", self.initial_step),
            ("min_step", self.min_step),
            ("max_step", self.max_step),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::InvalidArgument(format!("{name} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// Counters collected during one integration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub jacobian_evals: usize,
    pub factorizations: usize,
    pub newton_failures: usize,
}

/// Integrates `sys` over `[t_span.0, t_span.1]` starting from `init`.
pub fn integrate<T: Real, S: ImplicitSystem<T> + ?Sized>(
    sys: &S,
    t_span: (T, T),
    init: &DVector<T>,
    config: &IntegratorConfig,
) -> Result<Trajectory<T>> {
    config.validate()?;
    if init.len() != sys.dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, system has {}",
            init.len(),
            sys.dim()
        )));
    }
    if !(t_span.1 > t_span.0) {
        return Err(Error::InvalidArgument("empty time span".into()));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "initial state".into(),
        });
    }
    match config.method {
        Method::Trapezoidal => trapezoidal::integrate(sys, t_span, init, config),
        Method::Bdf => bdf::integrate(sys, t_span, init, config),
    }
}

/// Weighted max-norm error measure shared by both schemes.
pub(crate) fn error_norm<T: Real>(err: &DVector<T>, y_old: &DVector<T>, y_new: &DVector<T>, rel: T, abs: T) -> T {
    let mut worst = T::zero();
    for i in 0..err.len() {
        let scale = abs + rel * y_old[i].abs().max(y_new[i].abs());
        let r = err[i].abs() / scale;
        if !(r <= worst) {
            worst = r;
        }
    }
    worst
}

pub(crate) fn weighted_norm<T: Real>(v: &DVector<T>, y: &DVector<T>, rel: T, abs: T) -> T {
    let mut worst = T::zero();
    for i in 0..v.len() {
        let r = v[i].abs() / (abs + rel * y[i].abs());
        if !(r <= worst) {
            worst = r;
        }
    }
    worst
}

pub(crate) struct Controller<T> {
    pub safety: T,
    pub grow: T,
    pub shrink: T,
}

impl<T: Real> Controller<T> {
    pub fn standard() -> Self {
        Controller {
            safety: lit(0.9),
            grow: lit(2.0),
            shrink: lit(0.2),
        }
    }

    /// Unclamped multiplier, used to compare candidate orders.
    pub fn raw(&self, err: T, order: usize) -> T {
        if !err.is_finite() {
            return T::zero();
        }
        self.safety * err.max(lit(1e-300)).powf(-T::one() / lit::<T>(order as f64 + 1.0))
    }

    /// Step multiplier for error `err` of a method with local order `order`.
    pub fn factor(&self, err: T, order: usize) -> T {
        if err <= T::zero() || !err.is_finite() {
            return if err.is_finite() { self.grow } else { self.shrink };
        }
        let f = self.safety * err.powf(-T::one() / lit::<T>(order as f64 + 1.0));
        f.max(self.shrink).min(self.grow)
    }
}

/// Consistent initial derivative of `M x' = f(t, x)`.
///
/// For a regular `M` this is `M^{-1} f`. Otherwise the derivative also has to
/// satisfy the differentiated constraints `Z^T (J x' + f_t) = 0`; the stacked
/// system is solved in the least-squares sense.
pub(crate) fn initial_derivative<T: Real, S: ImplicitSystem<T> + ?Sized>(
    sys: &S,
    t: T,
    x: &DVector<T>,
    stats: &mut IntegrationStats,
) -> Result<DVector<T>> {
    let f = sys.rhs(t, x)?;
    stats.rhs_evals += 1;
    if let Ok(lu) = sys.mass().factor() {
        if let Ok(d) = lu.solve(&f) {
            return Ok(d);
        }
    }
    let jac = sys.jacobian(t, x)?;
    stats.jacobian_evals += 1;
    let dt = T::default_epsilon().sqrt() * t.abs().max(T::one());
    let f_t = (sys.rhs(t + dt, x)? - &f) / dt;
    stats.rhs_evals += 1;
    let d = match (sys.mass(), &jac) {
        (SystemMatrix::BlockDiagonal(mb), SystemMatrix::BlockDiagonal(jb))
            if mb.len() == jb.len() && mb.iter().zip(jb).all(|(a, b)| a.shape() == b.shape()) =>
        {
            // decoupled blocks: solve each small system on its own
            let mut d = DVector::zeros(x.len());
            let mut offset = 0;
            for (m, j) in mb.iter().zip(jb) {
                let k = m.nrows();
                let part = derivative_lsq(m, j, &f.rows(offset, k).into_owned(), &f_t.rows(offset, k).into_owned())?;
                d.rows_mut(offset, k).copy_from(&part);
                offset += k;
            }
            d
        }
        _ => derivative_lsq(&sys.mass().to_dense(), &jac.to_dense(), &f, &f_t)?,
    };
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "initial derivative".into(),
        });
    }
    Ok(d)
}

/// Least-squares solution of `[M; Z^T J] d = [f; -Z^T f_t]`.
fn derivative_lsq<T: Real>(
    mass: &DMatrix<T>,
    jac: &DMatrix<T>,
    f: &DVector<T>,
    f_t: &DVector<T>,
) -> Result<DVector<T>> {
    let (left, _) = null_spaces(mass, lit(1e-12));
    let n = f.len();
    let k = left.ncols();
    let mut a = DMatrix::zeros(n + k, n);
    a.rows_mut(0, n).copy_from(mass);
    a.rows_mut(n, k).copy_from(&(left.transpose() * jac));
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(f);
    rhs.rows_mut(n, k).copy_from(&(-(left.transpose() * f_t)));
    let svd = a.svd(true, true);
    svd.solve(&rhs, eps::<T>() * lit(1e3) * svd.singular_values.max())
        .map_err(|e| Error::Singular(e.to_string()))
}

/// First step size from the scale of the state and its derivative.
pub(crate) fn initial_step<T: Real>(config: &IntegratorConfig, y: &DVector<T>, yd: &DVector<T>, span: T) -> T {
    let h = match config.initial_step {
        Some(h) => lit(h),
        None => {
            let rel = lit(config.rel_tol);
            let abs = lit(config.abs_tol);
            let d0 = weighted_norm(y, y, rel, abs);
            let d1 = weighted_norm(yd, y, rel, abs);
            if d0 < lit(1e-5) || d1 < lit(1e-5) {
                lit::<T>(1e-6) * span
            } else {
                lit::<T>(0.01) * d0 / d1
            }
        }
    };
    let h = h.min(span);
    match config.max_step {
        Some(m) => h.min(lit(m)),
        None => h,
    }
}

/// Smallest admissible step near `t`.
pub(crate) fn min_step<T: Real>(config: &IntegratorConfig, t: T) -> T {
    let floor = lit::<T>(16.0) * T::default_epsilon() * t.abs().max(T::one());
    match config.min_step {
        Some(m) => floor.max(lit(m)),
        None => floor,
    }
}

/// Clips `h` so that the last step lands exactly on `end`.
pub(crate) fn clip_step<T: Real>(h: T, t: T, end: T, config: &IntegratorConfig) -> T {
    let h = match config.max_step {
        Some(m) => h.min(lit(m)),
        None => h,
    };
    let remaining = end - t;
    if h * lit(1.05) >= remaining {
        remaining
    } else if h * lit(2.0) > remaining {
        // split the tail evenly instead of leaving a sliver
        remaining * lit(0.5)
    } else {
        h
    }
}

pub(crate) fn underflow<T: Real>(t: T, h: T) -> Error {
    Error::Integration {
        t: to_f64(t),
        reason: format!("step size {:e} underflowed", to_f64(h)),
    }
}

pub(crate) fn too_many_steps<T: Real>(t: T, n: usize) -> Error {
    Error::Integration {
        t: to_f64(t),
        reason: format!("exceeded {n} steps"),
    }
}

/// Options for the damped Newton solve of the algebraic constraints.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyOptions {
    pub max_iter: usize,
    pub residual_tol: f64,
    /// Relative threshold separating zero singular values of the mass matrix.
    pub rank_tol: f64,
}

impl Default for ConsistencyOptions {
    fn default() -> Self {
        ConsistencyOptions {
            max_iter: 50,
            residual_tol: 1e-13,
            rank_tol: 1e-12,
        }
    }
}

/// Corrects `guess` so that the algebraic part of `M x' = f(t0, x)` holds.
///
/// With `Z` spanning the left null space of `M` and `N` the right null space,
/// solves `Z^T f(t0, guess + N a) = 0` for `a` by damped Newton; the
/// differential part `M x` is left untouched. A regular mass matrix returns
/// the guess unchanged.
pub fn consistent_initial_value<T: Real, S: ImplicitSystem<T> + ?Sized>(
    sys: &S,
    t0: T,
    guess: &DVector<T>,
    opts: &ConsistencyOptions,
) -> Result<DVector<T>> {
    let mass = sys.mass().to_dense();
    let (left, right) = null_spaces(&mass, lit(opts.rank_tol));
    if left.ncols() == 0 {
        return Ok(guess.clone());
    }
    if left.ncols() != right.ncols() {
        return Err(Error::Singular("mass matrix null spaces differ in dimension".into()));
    }
    let tol: T = lit(opts.residual_tol);
    let residual = |x: &DVector<T>| -> Result<DVector<T>> { Ok(left.transpose() * sys.rhs(t0, x)?) };
    let mut x = guess.clone();
    let mut r = residual(&x)?;
    let mut rn = r.norm();
    for _ in 0..opts.max_iter {
        if rn <= tol {
            return Ok(x);
        }
        let jac = sys.jacobian(t0, &x)?.to_dense();
        let reduced = left.transpose() * jac * &right;
        let step = reduced
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| Error::Singular("algebraic Jacobian is singular (index > 1?)".into()))?;
        let mut damping = T::one();
        loop {
            let trial = &x + &right * (&step * damping);
            let tr = residual(&trial)?;
            let tn = tr.norm();
            if tn.is_finite() && tn < rn {
                x = trial;
                r = tr;
                rn = tn;
                break;
            }
            damping *= lit(0.5);
            if damping < lit(1e-6) {
                return Err(Error::NewtonDivergence {
                    iterations: 0,
                    residual: to_f64(rn),
                });
            }
        }
    }
    if rn <= tol {
        Ok(x)
    } else {
        Err(Error::NewtonDivergence {
            iterations: opts.max_iter,
            residual: to_f64(rn),
        })
    }
}

/// Norm of the algebraic residual `Z^T f(t, x)`.
pub fn algebraic_residual<T: Real, S: ImplicitSystem<T> + ?Sized>(
    sys: &S,
    t: T,
    x: &DVector<T>,
    rank_tol: T,
) -> Result<T> {
    let (left, _) = null_spaces(&sys.mass().to_dense(), rank_tol);
    if left.ncols() == 0 {
        return Ok(T::zero());
    }
    Ok((left.transpose() * sys.rhs(t, x)?).norm())
}
