use nalgebra::DVector;

use super::newton::{Newton, Outcome};
use super::{
    clip_step, error_norm, initial_step, min_step, too_many_steps, underflow, Controller, ImplicitSystem,
    IntegrationStats, IntegratorConfig, Trajectory, TrapezoidalEstimate,
};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub(super) fn integrate<T: Real, S: ImplicitSystem<T> + ?Sized>(
    sys: &S,
    (start, end): (T, T),
    init: &DVector<T>,
    config: &IntegratorConfig,
) -> Result<Trajectory<T>> {
    let mass_lu = sys
        .mass()
        .factor()
        .map_err(|_| Error::InvalidArgument("the trapezoidal rule needs a regular mass matrix; use bdf".into()))?;
    let rel: T = lit(config.rel_tol);
    let abs: T = lit(config.abs_tol);
    let ctrl = Controller::<T>::standard();
    let mut stats = IntegrationStats::default();
    let mut newton = Newton::new();

    let mut t = start;
    let mut y = init.clone();
    let mut f = sys.rhs(t, &y)?;
    stats.rhs_evals += 1;
    let mut yd = mass_lu.solve(&f)?;
    let mut times = vec![t];
    let mut states = vec![y.clone()];
    let mut derivs = vec![yd.clone()];

    let mut h = initial_step(config, &y, &yd, end - start);
    let mut rejected_last = false;
    while t < end {
        if stats.accepted >= config.max_steps || stats.rejected + stats.newton_failures >= config.max_steps {
            return Err(too_many_steps(t, config.max_steps));
        }
        h = clip_step(h, t, end, config);
        if !(h >= min_step(config, t)) {
            return Err(underflow(t, h));
        }
        newton.begin_step(sys, t, &y, &mut stats)?;
        let t1 = if h == end - t { end } else { t + h };
        let c = lit::<T>(2.0) / h;
        let b = -(sys.mass().mul_vec(&y) * c + &f);
        let guess = &y + &yd * h;
        let y1 = match newton.solve(sys, t1, c, &b, &guess, config, &mut stats)? {
            Outcome::Converged(y1) => y1,
            Outcome::Failed => {
                stats.newton_failures += 1;
                if newton.fresh {
                    h *= lit(0.25);
                } else {
                    newton.refresh(sys, t, &y, &mut stats)?;
                }
                continue;
            }
        };
        let f1 = sys.rhs(t1, &y1)?;
        stats.rhs_evals += 1;
        let yd1 = mass_lu.solve(&f1)?;

        let (est, order) = match (config.trapezoidal_estimate, derivs.len()) {
            (TrapezoidalEstimate::ThirdDerivative, n) if n >= 2 => {
                // y''' = 2 yd[t_prev, t, t1]
                let t_prev = times[n - 2];
                let d01 = (&yd - &derivs[n - 2]) / (t - t_prev);
                let d12 = (&yd1 - &yd) / h;
                let third = (d12 - d01) * (lit::<T>(2.0) / (t1 - t_prev));
                (third * (h * h * h / lit::<T>(12.0)), 2)
            }
            _ => ((&yd - &yd1) * (h * lit::<T>(0.5)), 1),
        };
        let err = error_norm(&est, &y, &y1, rel, abs);
        let mut factor = ctrl.factor(err, order);
        if err <= T::one() {
            stats.accepted += 1;
            if rejected_last {
                factor = factor.min(T::one());
            }
            rejected_last = false;
            t = t1;
            y = y1;
            f = f1;
            yd = yd1;
            times.push(t);
            states.push(y.clone());
            derivs.push(yd.clone());
            if factor > T::one() && factor < lit(1.2) {
                factor = T::one();
            }
        } else {
            stats.rejected += 1;
            rejected_last = true;
            factor = factor.min(lit(0.9));
        }
        h *= factor;
    }
    Ok(Trajectory::from_parts(times, states, derivs, stats))
}
