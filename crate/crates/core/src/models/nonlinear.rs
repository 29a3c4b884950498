use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};

use super::ParamMonomial;
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// State nonlinearity `F(x, p)`.
pub trait Nonlinearity<T: Real>: Debug + Send + Sync {
    fn eval(&self, x: &DVector<T>, p: &[T]) -> Result<DVector<T>>;

    /// Dense Jacobian `dF/dx`.
    fn jacobian(&self, x: &DVector<T>, p: &[T]) -> Result<DMatrix<T>>;

    /// Structural nonzeros `(row, col)` of the Jacobian, sorted.
    fn pattern(&self) -> Vec<(usize, usize)>;

    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct ZeroNonlinearity {
    pub n: usize,
}

impl<T: Real> Nonlinearity<T> for ZeroNonlinearity {
    fn eval(&self, _x: &DVector<T>, _p: &[T]) -> Result<DVector<T>> {
        Ok(DVector::zeros(self.n))
    }

    fn jacobian(&self, _x: &DVector<T>, _p: &[T]) -> Result<DMatrix<T>> {
        Ok(DMatrix::zeros(self.n, self.n))
    }

    fn pattern(&self) -> Vec<(usize, usize)> {
        Vec::new()
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// One summand `coeff(p) * prod_k x_k^{e_k}` contributing to row `row`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTerm<T> {
    pub row: usize,
    pub coeff: ParamMonomial<T>,
    /// `(state index, power)` pairs with power >= 1.
    pub powers: Vec<(usize, u32)>,
}

/// Sum of polynomial terms in the state with parameter-monomial coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialNonlinearity<T> {
    n: usize,
    terms: Vec<PolynomialTerm<T>>,
}

impl<T: Real> PolynomialNonlinearity<T> {
    pub fn new(n: usize, terms: Vec<PolynomialTerm<T>>) -> Result<Self> {
        for t in &terms {
            if t.row >= n || t.powers.iter().any(|&(k, e)| k >= n || e == 0) {
                return Err(Error::Model(format!("polynomial term out of range: {t:?}")));
            }
        }
        Ok(PolynomialNonlinearity { n, terms })
    }

    pub fn terms(&self) -> &[PolynomialTerm<T>] {
        &self.terms
    }

    /// Highest total state degree over all terms.
    pub fn state_degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.powers.iter().map(|&(_, e)| e).sum())
            .max()
            .unwrap_or(0)
    }
}

impl<T: Real> Nonlinearity<T> for PolynomialNonlinearity<T> {
    fn eval(&self, x: &DVector<T>, p: &[T]) -> Result<DVector<T>> {
        let mut out: DVector<T> = DVector::zeros(self.n);
        for t in &self.terms {
            let mono = t.powers.iter().fold(T::one(), |acc, &(k, e)| acc * x[k].powi(e as i32));
            out[t.row] += t.coeff.eval(p) * mono;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow(format!(
                "polynomial nonlinearity at x = {:?}",
                to_vec(x)
            )));
        }
        Ok(out)
    }

    fn jacobian(&self, x: &DVector<T>, p: &[T]) -> Result<DMatrix<T>> {
        let mut jac = DMatrix::zeros(self.n, self.n);
        for t in &self.terms {
            let c = t.coeff.eval(p);
            for (i, &(k, e)) in t.powers.iter().enumerate() {
                let mut d = c * lit::<T>(e as f64) * x[k].powi(e as i32 - 1);
                for (j, &(kk, ee)) in t.powers.iter().enumerate() {
                    if j != i {
                        d *= x[kk].powi(ee as i32);
                    }
                }
                jac[(t.row, k)] += d;
            }
        }
        Ok(jac)
    }

    fn pattern(&self) -> Vec<(usize, usize)> {
        let mut p: Vec<(usize, usize)> = self
            .terms
            .iter()
            .flat_map(|t| t.powers.iter().map(move |&(k, _)| (t.row, k)))
            .collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Bipolar transistor current `beta (exp((x_a - x_b)/u_f) - 1)` injected into
/// several rows with fixed gains.
#[derive(Debug, Clone, PartialEq)]
pub struct DiodeNonlinearity<T> {
    pub n: usize,
    pub plus: usize,
    pub minus: usize,
    pub beta: T,
    pub u_f: T,
    /// `(row, gain)` pairs.
    pub gains: Vec<(usize, T)>,
}

impl<T: Real> DiodeNonlinearity<T> {
    fn argument(&self, x: &DVector<T>) -> Result<T> {
        let arg = (x[self.plus] - x[self.minus]) / self.u_f;
        // exp overflows f64 slightly above 709
        if !(arg < lit(700.0)) {
            return Err(Error::Overflow(format!(
                "transistor exponent {:e} at x = {:?}",
                to_f64(arg),
                to_vec(x)
            )));
        }
        Ok(arg)
    }
}

impl<T: Real> Nonlinearity<T> for DiodeNonlinearity<T> {
    fn eval(&self, x: &DVector<T>, _p: &[T]) -> Result<DVector<T>> {
        let f = self.beta * (self.argument(x)?.exp() - T::one());
        let mut out = DVector::zeros(self.n);
        for &(row, g) in &self.gains {
            out[row] += g * f;
        }
        Ok(out)
    }

    fn jacobian(&self, x: &DVector<T>, _p: &[T]) -> Result<DMatrix<T>> {
        let df = self.beta * self.argument(x)?.exp() / self.u_f;
        let mut jac = DMatrix::zeros(self.n, self.n);
        for &(row, g) in &self.gains {
            jac[(row, self.plus)] += g * df;
            jac[(row, self.minus)] -= g * df;
        }
        Ok(jac)
    }

    fn pattern(&self) -> Vec<(usize, usize)> {
        let mut p: Vec<(usize, usize)> = self
            .gains
            .iter()
            .flat_map(|&(r, _)| [(r, self.plus), (r, self.minus)])
            .collect();
        p.sort_unstable();
        p.dedup();
        p
    }
}

fn to_vec<T: Real>(x: &DVector<T>) -> Vec<f64> {
    x.iter().map(|v| to_f64(*v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check<N: Nonlinearity<f64>>(f: &N, x: &DVector<f64>, p: &[f64]) {
        let jac = f.jacobian(x, p).unwrap();
        let f0 = f.eval(x, p).unwrap();
        let pattern = f.pattern();
        for j in 0..x.len() {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let col = (f.eval(&xp, p).unwrap() - &f0) / h;
            for i in 0..x.len() {
                let scale = jac[(i, j)].abs().max(1.0);
                assert!((col[i] - jac[(i, j)]).abs() < 1e-5 * scale, "({i},{j})");
                if jac[(i, j)] != 0.0 {
                    assert!(pattern.contains(&(i, j)));
                }
            }
        }
    }

    #[test]
    fn polynomial_jacobian_matches_differences() {
        let f = PolynomialNonlinearity::new(
            3,
            vec![
                PolynomialTerm {
                    row: 0,
                    coeff: ParamMonomial::new(-1.0, vec![(1, 1)]),
                    powers: vec![(0, 1), (2, 1)],
                },
                PolynomialTerm {
                    row: 2,
                    coeff: ParamMonomial::constant(3.0),
                    powers: vec![(1, 2), (2, 1)],
                },
            ],
        )
        .unwrap();
        fd_check(&f, &DVector::from_vec(vec![0.5, -1.2, 2.0]), &[0.0, 2.0]);
        assert_eq!(f.pattern(), vec![(0, 0), (0, 2), (2, 1), (2, 2)]);
        assert_eq!(f.state_degree(), 3);
    }

    #[test]
    fn diode_jacobian_and_overflow() {
        let f = DiodeNonlinearity {
            n: 3,
            plus: 0,
            minus: 1,
            beta: 1e-6,
            u_f: 0.026,
            gains: vec![(0, -0.01), (2, 1.0)],
        };
        fd_check(&f, &DVector::from_vec(vec![0.1, 0.05, 0.0]), &[]);
        let big = DVector::from_vec(vec![100.0, 0.0, 0.0]);
        assert!(matches!(f.eval(&big, &[]), Err(Error::Overflow(_))));
    }

    #[test]
    fn invalid_terms_rejected() {
        let bad = PolynomialTerm {
            row: 3,
            coeff: ParamMonomial::constant(1.0),
            powers: vec![(0, 1)],
        };
        assert!(PolynomialNonlinearity::new(3, vec![bad]).is_err());
    }
}
