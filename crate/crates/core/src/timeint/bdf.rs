//! Variable-coefficient, variable-order BDF.
//!
//! The BDF formula of order `k` differentiates the interpolation polynomial
//! through the new point and the last `k` accepted points; the predictor
//! extrapolates the polynomial through the last `k + 1` points.

use std::collections::VecDeque;

use nalgebra::DVector;

use super::newton::{Newton, Outcome};
use super::{
    clip_step, error_norm, initial_derivative, initial_step, min_step, too_many_steps, underflow, Controller,
    ImplicitSystem, IntegrationStats, IntegratorConfig, Trajectory,
};
use crate::error::Result;
use crate::scalar::{lit, Real};

/// Weights `a_j` with `p'(nodes[0]) = sum_j a_j p(nodes[j])` for the
/// interpolation polynomial through all nodes.
pub(crate) fn derivative_weights<T: Real>(nodes: &[T]) -> Vec<T> {
    let x0 = nodes[0];
    let n = nodes.len();
    let mut w = vec![T::zero(); n];
    for m in 1..n {
        w[0] += T::one() / (x0 - nodes[m]);
    }
    for j in 1..n {
        let mut num = T::one();
        let mut den = T::one();
        for m in 0..n {
            if m != j {
                den *= nodes[j] - nodes[m];
                if m != 0 {
                    num *= x0 - nodes[m];
                }
            }
        }
        w[j] = num / den;
    }
    w
}

/// Lagrange interpolation weights for evaluating at `t`.
pub(crate) fn interpolation_weights<T: Real>(nodes: &[T], t: T) -> Vec<T> {
    (0..nodes.len())
        .map(|j| {
            let mut w = T::one();
            for (m, &xm) in nodes.iter().enumerate() {
                if m != j {
                    w *= (t - xm) / (nodes[j] - xm);
                }
            }
            w
        })
        .collect()
}

/// Highest-order divided difference of `values` over `nodes`.
pub(crate) fn divided_difference<T: Real>(nodes: &[T], values: &[&DVector<T>]) -> DVector<T> {
    let mut table: Vec<DVector<T>> = values.iter().map(|v| (*v).clone()).collect();
    let n = nodes.len();
    for level in 1..n {
        for i in 0..n - level {
            table[i] = (&table[i] - &table[i + 1]) / (nodes[i] - nodes[i + level]);
        }
    }
    table.swap_remove(0)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

pub(super) fn integrate<T: Real, S: ImplicitSystem<T> + ?Sized>(
    sys: &S,
    (start, end): (T, T),
    init: &DVector<T>,
    config: &IntegratorConfig,
) -> Result<Trajectory<T>> {
    let rel: T = lit(config.rel_tol);
    let abs: T = lit(config.abs_tol);
    let max_order = config.max_order;
    let ctrl = Controller::<T>::standard();
    let mut stats = IntegrationStats::default();
    let mut newton = Newton::new();

    let y0 = init.clone();
    let yd0 = initial_derivative(sys, start, &y0, &mut stats).ok();
    let mut h = initial_step(
        config,
        &y0,
        yd0.as_ref().unwrap_or(&DVector::zeros(y0.len())),
        end - start,
    );
    let mut times = vec![start];
    let mut states = vec![y0.clone()];
    let mut derivs = vec![yd0.clone().unwrap_or_else(|| DVector::zeros(y0.len()))];
    // most recent first
    let mut hist: VecDeque<(T, DVector<T>)> = VecDeque::from([(start, y0)]);
    let keep = max_order + 3;

    let mut order = 1usize;
    let mut at_order = 0usize;
    let mut failures = 0usize;
    let mut t = start;
    while t < end {
        if stats.accepted >= config.max_steps || stats.rejected + stats.newton_failures >= config.max_steps {
            return Err(too_many_steps(t, config.max_steps));
        }
        h = clip_step(h, t, end, config);
        if !(h >= min_step(config, t)) {
            return Err(underflow(t, h));
        }
        let y = hist[0].1.clone();
        newton.begin_step(sys, t, &y, &mut stats)?;
        let t1 = if h == end - t { end } else { t + h };

        let mut nodes = vec![t1];
        nodes.extend(hist.iter().take(order).map(|(s, _)| *s));
        let alpha = derivative_weights(&nodes);
        let mut past = DVector::zeros(y.len());
        for j in 1..=order {
            past += &hist[j - 1].1 * alpha[j];
        }
        let b = sys.mass().mul_vec(&past);

        let (guess, scale) = if hist.len() > order {
            let pn: Vec<T> = hist.iter().take(order + 1).map(|(s, _)| *s).collect();
            let w = interpolation_weights(&pn, t1);
            let mut p = DVector::zeros(y.len());
            for (j, wj) in w.iter().enumerate() {
                p += &hist[j].1 * *wj;
            }
            (p, h / (t1 - pn[order]))
        } else {
            // start-up: Taylor predictor, y - pred ~ h^2 y''
            match &yd0 {
                Some(d) => (&y + d * h, lit(0.5)),
                None => (y.clone(), lit(0.5)),
            }
        };

        let y1 = match newton.solve(sys, t1, alpha[0], &b, &guess, config, &mut stats)? {
            Outcome::Converged(y1) => y1,
            Outcome::Failed => {
                stats.newton_failures += 1;
                if newton.fresh {
                    h *= lit(0.25);
                    failures += 1;
                    if failures >= 2 {
                        order = 1;
                        at_order = 0;
                    }
                } else {
                    newton.refresh(sys, t, &y, &mut stats)?;
                }
                continue;
            }
        };
        let est = (&y1 - &guess) * scale;
        let err = error_norm(&est, &y, &y1, rel, abs);
        if !(err <= T::one()) {
            stats.rejected += 1;
            failures += 1;
            if failures >= 2 && order > 1 {
                order -= 1;
                at_order = 0;
            }
            h *= ctrl.factor(err, order).min(lit(0.9));
            continue;
        }

        stats.accepted += 1;
        let mut yd1 = &y1 * alpha[0] + &past;
        if times.len() == 1 && yd0.is_none() {
            derivs[0] = (&y1 - &y) / h;
            yd1 = derivs[0].clone();
        }
        t = t1;
        times.push(t);
        states.push(y1.clone());
        derivs.push(yd1);
        hist.push_front((t, y1.clone()));
        hist.truncate(keep);
        at_order += 1;

        let mut best_order = order;
        let mut best = ctrl.raw(err, order);
        if at_order > order && failures == 0 && !config.fixed_order {
            let estimate = |j: usize| -> Option<T> {
                if hist.len() < j + 2 {
                    return None;
                }
                let pn: Vec<T> = hist.iter().take(j + 2).map(|(s, _)| *s).collect();
                let pv: Vec<&DVector<T>> = hist.iter().take(j + 2).map(|(_, v)| v).collect();
                let dd = divided_difference(&pn, &pv);
                let e = dd * (h.powi(j as i32 + 1) * lit::<T>(factorial(j)));
                Some(error_norm(&e, &y, &y1, rel, abs))
            };
            if order > 1 {
                if let Some(e) = estimate(order - 1) {
                    let f = ctrl.raw(e, order - 1);
                    if f > best {
                        best = f;
                        best_order = order - 1;
                    }
                }
            }
            if order < max_order {
                if let Some(e) = estimate(order + 1) {
                    let f = ctrl.raw(e, order + 1);
                    if f > best * lit(1.1) {
                        best = f;
                        best_order = order + 1;
                    }
                }
            }
        }
        best = best.max(ctrl.shrink).min(ctrl.grow);
        if failures > 0 {
            best = best.min(T::one());
        }
        if config.fixed_order {
            best_order = max_order.min(hist.len() - 1);
            best = ctrl.factor(err, order);
            if failures > 0 {
                best = best.min(T::one());
            }
        }
        if best_order != order {
            order = best_order;
            at_order = 0;
        }
        failures = 0;
        if best > T::one() && best < lit(1.2) {
            best = T::one();
        }
        h *= best;
    }
    Ok(Trajectory::from_parts(times, states, derivs, stats))
}
