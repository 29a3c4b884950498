//! Declarative model files.
//!
//! ```toml
//! name = "decay"
//! parameters = ["k"]
//! nominal = [1.0]
//! variation = 0.1
//! horizon = [0.0, 5.0]
//! initial_state = [1.0]
//!
//! [a]
//! terms = [{ row = 0, col = 0, coeff = -1.0, params = [[0, 1]] }]
//!
//! [nonlinearity]
//! kind = "polynomial"
//! terms = [{ row = 0, coeff = -0.1, states = [[0, 2]] }]
//! ```
//!
//! `e` and `c` default to the identity, `a` and `b` to zero. Parameter and
//! state indices are 0-based; `params = [[j, e], ...]` stands for
//! `prod p_j^e`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    DiodeNonlinearity, InitialState, Nonlinearity, ParamMatrix, ParamMonomial, ParametricSystem,
    PolynomialNonlinearity, PolynomialTerm, Signal, ZeroNonlinearity,
};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub name: String,
    pub parameters: Vec<String>,
    pub nominal: Vec<f64>,
    #[serde(default = "default_variation")]
    pub variation: f64,
    pub horizon: [f64; 2],
    pub initial_state: Vec<f64>,
    #[serde(default)]
    pub dae: bool,
    #[serde(default)]
    pub inputs: Vec<Signal>,
    #[serde(default)]
    pub outputs: Option<Vec<String>>,
    #[serde(default)]
    pub e: Option<MatrixSpec>,
    #[serde(default)]
    pub a: Option<MatrixSpec>,
    #[serde(default)]
    pub b: Option<MatrixSpec>,
    #[serde(default)]
    pub c: Option<MatrixSpec>,
    #[serde(default)]
    pub nonlinearity: NonlinearitySpec,
}

fn default_variation() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    /// Dense rows; omitted means the default for that matrix.
    #[serde(default)]
    pub constant: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub terms: Vec<EntrySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub row: usize,
    pub col: usize,
    pub coeff: f64,
    #[serde(default)]
    pub params: Vec<(usize, i32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearitySpec {
    #[default]
    None,
    Polynomial {
        terms: Vec<PolynomialTermSpec>,
    },
    /// `beta (exp((x_plus - x_minus)/u_f) - 1)` scaled into rows by `gains`.
    Diode {
        plus: usize,
        minus: usize,
        beta: f64,
        u_f: f64,
        gains: Vec<(usize, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialTermSpec {
    pub row: usize,
    pub coeff: f64,
    #[serde(default)]
    pub params: Vec<(usize, i32)>,
    pub states: Vec<(usize, u32)>,
}

impl CustomModel {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn build<T: Real>(&self) -> Result<ParametricSystem<T>> {
        let n = self.initial_state.len();
        if n == 0 {
            return Err(Error::Model("empty initial state".into()));
        }
        let n_in = self.inputs.len();
        let outputs = self
            .outputs
            .clone()
            .unwrap_or_else(|| (1..=n).map(|i| format!("x{i}")).collect());
        let n_out = outputs.len();
        let e = matrix(self.e.as_ref(), n, n, true)?;
        let a = matrix(self.a.as_ref(), n, n, false)?;
        let b = matrix(self.b.as_ref(), n, n_in, false)?;
        let c = matrix(self.c.as_ref(), n_out, n, n_out == n)?;
        let f: Arc<dyn Nonlinearity<T>> = match &self.nonlinearity {
            NonlinearitySpec::None => Arc::new(ZeroNonlinearity { n }),
            NonlinearitySpec::Polynomial { terms } => Arc::new(PolynomialNonlinearity::new(
                n,
                terms
                    .iter()
                    .map(|t| PolynomialTerm {
                        row: t.row,
                        coeff: ParamMonomial::new(lit(t.coeff), t.params.clone()),
                        powers: t.states.clone(),
                    })
                    .collect(),
            )?),
            NonlinearitySpec::Diode {
                plus,
                minus,
                beta,
                u_f,
                gains,
            } => {
                if *plus >= n || *minus >= n || gains.iter().any(|&(r, _)| r >= n) {
                    return Err(Error::Model("diode indices out of range".into()));
                }
                Arc::new(DiodeNonlinearity {
                    n,
                    plus: *plus,
                    minus: *minus,
                    beta: lit(*beta),
                    u_f: lit(*u_f),
                    gains: gains.iter().map(|&(r, g)| (r, lit(g))).collect(),
                })
            }
        };
        let sys = ParametricSystem {
            name: self.name.clone(),
            parameter_names: self.parameters.clone(),
            nominal: self.nominal.iter().map(|&v| lit(v)).collect(),
            variation: lit(self.variation),
            horizon: (lit(self.horizon[0]), lit(self.horizon[1])),
            e,
            a,
            b,
            c,
            f,
            x0: InitialState::Constant(DVector::from_iterator(n, self.initial_state.iter().map(|&v| lit(v)))),
            input: self.inputs.clone(),
            output_names: outputs,
            is_dae: self.dae,
        };
        sys.validate()?;
        Ok(sys)
    }
}

fn matrix<T: Real>(spec: Option<&MatrixSpec>, rows: usize, cols: usize, identity: bool) -> Result<ParamMatrix<T>> {
    let default = || {
        if identity {
            DMatrix::identity(rows, cols)
        } else {
            DMatrix::zeros(rows, cols)
        }
    };
    let Some(spec) = spec else {
        return Ok(ParamMatrix::constant(default()));
    };
    let constant = match &spec.constant {
        None => default(),
        Some(data) => {
            if data.len() != rows || data.iter().any(|r| r.len() != cols) {
                return Err(Error::Model(format!("matrix must be {rows}x{cols}")));
            }
            DMatrix::from_fn(rows, cols, |i, j| lit(data[i][j]))
        }
    };
    let mut m = ParamMatrix::constant(constant);
    for t in &spec.terms {
        if t.row >= rows || t.col >= cols {
            return Err(Error::Model(format!(
                "entry ({}, {}) outside {rows}x{cols}",
                t.row, t.col
            )));
        }
        m = m.with(t.row, t.col, ParamMonomial::new(lit(t.coeff), t.params.clone()));
    }
    Ok(m)
}
