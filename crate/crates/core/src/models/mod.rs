//! Parametric systems `E(p) x' = A(p) x + F(x, p) + B(p) u(t)`, `y = C(p) x`.

mod builtin;
mod custom;
mod nonlinear;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SystemMatrix;
use crate::pcbasis::ParameterBox;
use crate::scalar::{lit, Real};
use crate::timeint::{consistent_initial_value, ConsistencyOptions, ImplicitSystem};

pub use builtin::{builtin, scrapie, transistor_amplifier, BUILTIN_MODELS};
pub use custom::{CustomModel, MatrixSpec, NonlinearitySpec, PolynomialTermSpec};
pub use nonlinear::{DiodeNonlinearity, Nonlinearity, PolynomialNonlinearity, PolynomialTerm, ZeroNonlinearity};

/// `coeff * prod_j p_j^{e_j}`; exponents may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMonomial<T> {
    pub coeff: T,
    pub exponents: Vec<(usize, i32)>,
}

impl<T: Real> ParamMonomial<T> {
    pub fn new(coeff: T, exponents: Vec<(usize, i32)>) -> Self {
        ParamMonomial { coeff, exponents }
    }

    pub fn constant(coeff: T) -> Self {
        ParamMonomial {
            coeff,
            exponents: Vec::new(),
        }
    }

    /// `coeff * p_j`.
    pub fn linear(coeff: T, j: usize) -> Self {
        ParamMonomial::new(coeff, vec![(j, 1)])
    }

    pub fn eval(&self, p: &[T]) -> T {
        self.exponents
            .iter()
            .fold(self.coeff, |acc, &(j, e)| acc * p[j].powi(e))
    }

    fn max_param(&self) -> Option<usize> {
        self.exponents.iter().map(|&(j, _)| j).max()
    }
}

/// Matrix whose entries are sums of parameter monomials on top of a constant part.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix<T: Real> {
    constant: DMatrix<T>,
    terms: Vec<(usize, usize, ParamMonomial<T>)>,
}

impl<T: Real> ParamMatrix<T> {
    pub fn constant(m: DMatrix<T>) -> Self {
        ParamMatrix {
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ParamMatrix::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        ParamMatrix::constant(DMatrix::identity(n, n))
    }

    /// Adds `term` to entry `(row, col)`.
    pub fn with(mut self, row: usize, col: usize, term: ParamMonomial<T>) -> Self {
        assert!(row < self.nrows() && col < self.ncols(), "entry out of range");
        self.terms.push((row, col, term));
        self
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn is_parameter_free(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn constant_part(&self) -> &DMatrix<T> {
        &self.constant
    }

    pub fn terms(&self) -> &[(usize, usize, ParamMonomial<T>)] {
        &self.terms
    }

    pub fn eval(&self, p: &[T]) -> DMatrix<T> {
        let mut m = self.constant.clone();
        for (r, c, t) in &self.terms {
            m[(*r, *c)] += t.eval(p);
        }
        m
    }

    fn max_param(&self) -> Option<usize> {
        self.terms.iter().filter_map(|(_, _, t)| t.max_param()).max()
    }
}

/// Scalar input component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Signal {
    Constant {
        value: f64,
    },
    /// `amplitude * sin(2 pi t / period + phase)`.
    Sine {
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Signal {
    pub fn eval<T: Real>(&self, t: T) -> T {
        match *self {
            Signal::Constant { value } => lit(value),
            Signal::Sine {
                amplitude,
                period,
                phase,
            } => lit::<T>(amplitude) * (T::two_pi() * t / lit::<T>(period) + lit::<T>(phase)).sin(),
        }
    }
}

/// Parameter-dependent initial state.
#[derive(Clone)]
pub enum InitialState<T: Real> {
    Constant(DVector<T>),
    Parametric(Arc<dyn Fn(&[T]) -> DVector<T> + Send + Sync>),
}

impl<T: Real> InitialState<T> {
    pub fn eval(&self, p: &[T]) -> DVector<T> {
        match self {
            InitialState::Constant(x) => x.clone(),
            InitialState::Parametric(f) => f(p),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, InitialState::Constant(_))
    }
}

impl<T: Real> fmt::Debug for InitialState<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialState::Constant(x) => f.debug_tuple("Constant").field(&x.as_slice()).finish(),
            InitialState::Parametric(_) => f.write_str("Parametric(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParametricSystem<T: Real> {
    pub name: String,
    pub parameter_names: Vec<String>,
    pub nominal: Vec<T>,
    /// Default relative half-width of the uniform parameter distributions.
    pub variation: T,
    pub horizon: (T, T),
    pub e: ParamMatrix<T>,
    pub a: ParamMatrix<T>,
    pub b: ParamMatrix<T>,
    pub c: ParamMatrix<T>,
    pub f: Arc<dyn Nonlinearity<T>>,
    pub x0: InitialState<T>,
    pub input: Vec<Signal>,
    pub output_names: Vec<String>,
    pub is_dae: bool,
}

impl<T: Real> ParametricSystem<T> {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.c.nrows()
    }

    pub fn q(&self) -> usize {
        self.nominal.len()
    }

    /// Checks shapes and parameter references.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let shapes = [
            ("E", &self.e, n, n),
            ("A", &self.a, n, n),
            ("B", &self.b, n, self.input.len()),
            ("C", &self.c, self.output_names.len(), n),
        ];
        for (name, m, r, c) in shapes {
            if m.nrows() != r || m.ncols() != c {
                return Err(Error::Model(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if let Some(j) = m.max_param() {
                if j >= self.q() {
                    return Err(Error::Model(format!("{name} refers to parameter {j} of {}", self.q())));
                }
            }
        }
        if self.parameter_names.len() != self.q() {
            return Err(Error::Model(
                "parameter names and nominal values differ in length".into(),
            ));
        }
        if self.x0.eval(&self.nominal).len() != n {
            return Err(Error::Model("initial state has the wrong length".into()));
        }
        if !(self.horizon.1 > self.horizon.0) {
            return Err(Error::Model("empty horizon".into()));
        }
        let sv = self.e.eval(&self.nominal).singular_values();
        let singular = sv.min() <= lit::<T>(1e-12) * sv.max();
        if singular && !self.is_dae {
            return Err(Error::Model(
                "singular E at the nominal point but is_dae is false".into(),
            ));
        }
        Ok(())
    }

    pub fn parameter_box(&self, variation: Option<T>) -> Result<ParameterBox<T>> {
        ParameterBox::around_nominal(&self.nominal, variation.unwrap_or(self.variation))
    }

    pub fn input_at(&self, t: T) -> DVector<T> {
        DVector::from_iterator(self.input.len(), self.input.iter().map(|s| s.eval(t)))
    }

    /// `A(p) x + F(x, p) + B(p) u(t)`.
    pub fn eval_rhs(&self, t: T, x: &DVector<T>, p: &[T]) -> Result<DVector<T>> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "state has length {}, model {}",
                x.len(),
                self.n()
            )));
        }
        let mut out = self.a.eval(p) * x + self.f.eval(x, p)?;
        if self.n_in() > 0 {
            out += self.b.eval(p) * self.input_at(t);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{} right-hand side", self.name),
            });
        }
        Ok(out)
    }

    /// The system frozen at parameter point `p`.
    pub fn at(&self, p: &[T]) -> Result<NodeSystem<T>> {
        if p.len() != self.q() {
            return Err(Error::Dimension(format!(
                "{} parameters, model has {}",
                p.len(),
                self.q()
            )));
        }
        Ok(NodeSystem {
            mass: SystemMatrix::Dense(self.e.eval(p)),
            a: self.a.eval(p),
            b: self.b.eval(p),
            f: self.f.clone(),
            input: self.input.clone(),
            p: p.to_vec(),
        })
    }

    /// Initial value at `p`, corrected onto the algebraic constraints for DAEs.
    pub fn consistent_init(&self, p: &[T], opts: &ConsistencyOptions) -> Result<DVector<T>> {
        let x0 = self.x0.eval(p);
        if !self.is_dae {
            return Ok(x0);
        }
        consistent_initial_value(&self.at(p)?, self.horizon.0, &x0, opts)
    }
}

/// A [`ParametricSystem`] at one parameter point, as an implicit ODE/DAE.
#[derive(Debug, Clone)]
pub struct NodeSystem<T: Real> {
    mass: SystemMatrix<T>,
    a: DMatrix<T>,
    b: DMatrix<T>,
    f: Arc<dyn Nonlinearity<T>>,
    input: Vec<Signal>,
    p: Vec<T>,
}

impl<T: Real> NodeSystem<T> {
    pub fn parameters(&self) -> &[T] {
        &self.p
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn nonlinearity(&self) -> &Arc<dyn Nonlinearity<T>> {
        &self.f
    }
}

impl<T: Real> ImplicitSystem<T> for NodeSystem<T> {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn mass(&self) -> &SystemMatrix<T> {
        &self.mass
    }

    fn rhs(&self, t: T, x: &DVector<T>) -> Result<DVector<T>> {
        let mut out = &self.a * x + self.f.eval(x, &self.p)?;
        if !self.input.is_empty() {
            let u = DVector::from_iterator(self.input.len(), self.input.iter().map(|s| s.eval(t)));
            out += &self.b * u;
        }
        Ok(out)
    }

    fn jacobian(&self, _t: T, x: &DVector<T>) -> Result<SystemMatrix<T>> {
        Ok(SystemMatrix::Dense(&self.a + self.f.jacobian(x, &self.p)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_with_negative_exponent() {
        let m = ParamMonomial::new(2.0, vec![(0, 1), (1, -1)]);
        assert_eq!(m.eval(&[6.0, 4.0]), 3.0);
        assert_eq!(ParamMonomial::constant(5.0).eval(&[1.0]), 5.0);
    }

    #[test]
    fn param_matrix_accumulates_terms() {
        let m = ParamMatrix::identity(2).with(0, 1, ParamMonomial::linear(3.0, 0)).with(
            0,
            1,
            ParamMonomial::linear(-1.0, 1),
        );
        let v = m.eval(&[2.0, 1.0]);
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 0.0, 1.0]));
        assert!(!m.is_parameter_free());
    }

    #[test]
    fn signals() {
        let s = Signal::Sine {
            amplitude: 0.4,
            period: 0.01,
            phase: 0.0,
        };
        assert!((s.eval(0.0025f64) - 0.4).abs() < 1e-15);
        assert_eq!(Signal::Constant { value: 1.0 }.eval(3.0f64), 1.0);
    }
}
