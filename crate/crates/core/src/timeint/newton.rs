//! Simplified Newton iteration shared by the implicit schemes.
//!
//! Each stage solves `G(y) = c M y + b - f(t, y) = 0`. The Jacobian of `f` is
//! kept across steps and the iteration matrix `c M - J` is refactored only when
//! `c` or the Jacobian changes.

use nalgebra::DVector;

use super::{weighted_norm, ImplicitSystem, IntegrationStats, IntegratorConfig};
use crate::error::{Error, Result};
use crate::linalg::{Factorization, SystemMatrix};
use crate::scalar::{eps, lit, Real};

pub(super) struct Newton<T: Real> {
    jac: Option<SystemMatrix<T>>,
    /// The Jacobian was evaluated at the start of the current step.
    pub fresh: bool,
    jac_t: Option<T>,
    /// Convergence was slow; re-evaluate the Jacobian at the next step.
    pub stale: bool,
    factored: Option<(T, Factorization<T>)>,
    eta: T,
}

pub(super) enum Outcome<T: Real> {
    Converged(DVector<T>),
    Failed,
}

impl<T: Real> Newton<T> {
    pub fn new() -> Self {
        Newton {
            jac: None,
            fresh: false,
            jac_t: None,
            stale: true,
            factored: None,
            eta: T::one(),
        }
    }

    /// Marks the start of a step attempt at `(t, y)`; retries of a rejected
    /// attempt pass the same `t`.
    pub fn begin_step<S: ImplicitSystem<T> + ?Sized>(
        &mut self,
        sys: &S,
        t: T,
        y: &DVector<T>,
        stats: &mut IntegrationStats,
    ) -> Result<()> {
        self.fresh = self.jac_t == Some(t);
        if self.stale || self.jac.is_none() {
            self.refresh(sys, t, y, stats)?;
        }
        Ok(())
    }

    pub fn refresh<S: ImplicitSystem<T> + ?Sized>(
        &mut self,
        sys: &S,
        t: T,
        y: &DVector<T>,
        stats: &mut IntegrationStats,
    ) -> Result<()> {
        let jac = sys.jacobian(t, y)?;
        if !jac.is_finite() {
            return Err(Error::NonFinite {
                context: format!("Jacobian at t = {:e}", crate::scalar::to_f64(t)),
            });
        }
        stats.jacobian_evals += 1;
        self.jac = Some(jac);
        self.jac_t = Some(t);
        self.factored = None;
        self.fresh = true;
        self.stale = false;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn solve<S: ImplicitSystem<T> + ?Sized>(
        &mut self,
        sys: &S,
        t: T,
        c: T,
        b: &DVector<T>,
        guess: &DVector<T>,
        config: &IntegratorConfig,
        stats: &mut IntegrationStats,
    ) -> Result<Outcome<T>> {
        let rel: T = lit(config.rel_tol);
        let abs: T = lit(config.abs_tol);
        let tol: T = lit(config.newton_tol);
        if !matches!(&self.factored, Some((key, _)) if *key == c) {
            let jac = self.jac.as_ref().expect("Jacobian evaluated in begin_step");
            let iteration = sys.mass().combine(c, jac, -T::one());
            stats.factorizations += 1;
            match iteration.factor() {
                Ok(lu) => self.factored = Some((c, lu)),
                Err(Error::Singular(_)) => {
                    self.factored = None;
                    return Ok(Outcome::Failed);
                }
                Err(e) => return Err(e),
            }
        }
        let lu = &self.factored.as_ref().expect("just factored").1;
        let mass = sys.mass();
        let mut y = guess.clone();
        let mut eta = self.eta.max(eps::<T>()).powf(lit(0.8));
        let mut previous: Option<T> = None;
        for _ in 0..config.newton_max_iter {
            let f = sys.rhs(t, &y)?;
            stats.rhs_evals += 1;
            let g = mass.mul_vec(&y) * c + b - f;
            let dx = match lu.solve(&(-g)) {
                Ok(dx) => dx,
                Err(Error::Singular(_)) | Err(Error::NonFinite { .. }) => return Ok(Outcome::Failed),
                Err(e) => return Err(e),
            };
            y += &dx;
            let norm = weighted_norm(&dx, &y, rel, abs);
            if !norm.is_finite() {
                return Ok(Outcome::Failed);
            }
            if let Some(prev) = previous {
                let theta = norm / prev;
                if theta >= lit(0.99) {
                    self.stale = true;
                    return Ok(Outcome::Failed);
                }
                if theta > lit(0.5) {
                    self.stale = true;
                }
                eta = theta / (T::one() - theta);
            }
            if norm == T::zero() || eta * norm <= tol {
                self.eta = eta;
                return Ok(Outcome::Converged(y));
            }
            previous = Some(norm);
        }
        self.stale = true;
        Ok(Outcome::Failed)
    }
}
