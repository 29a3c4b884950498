//! Stochastic Galerkin projection of a parametric system onto a polynomial
//! chaos basis.
//!
//! The coupled state stacks the coefficient blocks: `v[i * n + k]` is the
//! coefficient of `Phi_i` for state component `k`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fom::FullOrderModel;
use crate::linalg::SystemMatrix;
use crate::models::{Nonlinearity, ParamMatrix, ParametricSystem, Signal};
use crate::pcbasis::BasisSpec;
use crate::quadrature::{expect, QuadratureRule};
use crate::scalar::{to_f64, Real};
use crate::timeint::{consistent_initial_value, ConsistencyOptions, ImplicitSystem};

/// `E[S (x) M]` with `S = s s^T`: block `(i, j)` is `sum_l g_l Phi_i Phi_j M(p_l)`.
pub(crate) fn kron_expectation<T: Real>(phi: &DMatrix<T>, weights: &[T], mats: &[DMatrix<T>]) -> DMatrix<T> {
    let m = phi.ncols();
    let (rows, cols) = mats[0].shape();
    let mut out = DMatrix::zeros(m * rows, m * cols);
    let entries: Vec<(usize, usize)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter(|&(r, c)| mats.iter().any(|mat| mat[(r, c)] != T::zero()))
        .collect();
    let blocks: Vec<DMatrix<T>> = entries
        .par_iter()
        .map(|&(r, c)| {
            let g: Vec<T> = weights.iter().zip(mats).map(|(&w, mat)| w * mat[(r, c)]).collect();
            weighted_gram(phi, &g)
        })
        .collect();
    for (&(r, c), block) in entries.iter().zip(&blocks) {
        for i in 0..m {
            for j in 0..m {
                out[(i * rows + r, j * cols + c)] = block[(i, j)];
            }
        }
    }
    out
}

/// `Phi^T diag(g) Phi`.
pub(crate) fn weighted_gram<T: Real>(phi: &DMatrix<T>, g: &[T]) -> DMatrix<T> {
    let mut scaled = phi.clone();
    for (l, &gl) in g.iter().enumerate() {
        scaled.row_mut(l).scale_mut(gl);
    }
    phi.transpose() * scaled
}

/// The Galerkin matrices `E[S (x) E]`, `E[S (x) A]`, `E[s (x) B]`, `E[S (x) C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBlocks<T: Real> {
    pub e: DMatrix<T>,
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
}

fn eval_at_nodes<T: Real>(m: &ParamMatrix<T>, rule: &QuadratureRule<T>) -> Vec<DMatrix<T>> {
    rule.nodes().iter().map(|p| m.eval(p)).collect()
}

pub fn assemble_linear<T: Real>(
    model: &ParametricSystem<T>,
    basis: &BasisSpec<T>,
    rule: &QuadratureRule<T>,
) -> Result<LinearBlocks<T>> {
    if model.q() != basis.q() {
        return Err(Error::Dimension(format!(
            "model has {} parameters, basis {}",
            model.q(),
            basis.q()
        )));
    }
    let phi = basis.evaluate_at_nodes(rule)?;
    let w = rule.weights();
    let (n, n_in, m) = (model.n(), model.n_in(), basis.len());
    let e = kron_expectation(&phi, w, &eval_at_nodes(&model.e, rule));
    let a = kron_expectation(&phi, w, &eval_at_nodes(&model.a, rule));
    let c = kron_expectation(&phi, w, &eval_at_nodes(&model.c, rule));
    let mut b = DMatrix::zeros(m * n, n_in);
    if n_in > 0 {
        let bs = eval_at_nodes(&model.b, rule);
        for i in 0..m {
            let mut block = DMatrix::zeros(n, n_in);
            for (l, bl) in bs.iter().enumerate() {
                block += bl * (w[l] * phi[(l, i)]);
            }
            b.view_mut((i * n, 0), (n, n_in)).copy_from(&block);
        }
    }
    Ok(LinearBlocks { e, a, b, c })
}

/// Quadrature approximation of the projected nonlinearity
/// `F_i(v) = sum_l g_l F(sum_j v_j Phi_j(p_l), p_l) Phi_i(p_l)`.
#[derive(Debug, Clone)]
pub struct GalerkinNonlinear<T: Real> {
    f: Arc<dyn Nonlinearity<T>>,
    nodes: Vec<Vec<T>>,
    weights: Vec<T>,
    /// `k x m` basis values at the nodes.
    phi: DMatrix<T>,
    n: usize,
}

impl<T: Real> GalerkinNonlinear<T> {
    pub fn new(model: &ParametricSystem<T>, basis: &BasisSpec<T>, rule: &QuadratureRule<T>) -> Result<Self> {
        Ok(GalerkinNonlinear {
            f: model.f.clone(),
            nodes: rule.nodes().to_vec(),
            weights: rule.weights().to_vec(),
            phi: basis.evaluate_at_nodes(rule)?,
            n: model.n(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.f.is_zero()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// State at every node, as columns of an `n x k` matrix.
    fn node_states(&self, v: &DVector<T>) -> DMatrix<T> {
        let m = self.phi.ncols();
        let coeffs = DMatrix::from_column_slice(self.n, m, v.as_slice());
        coeffs * self.phi.transpose()
    }

    pub fn eval(&self, v: &DVector<T>) -> Result<DVector<T>> {
        let m = self.phi.ncols();
        if v.len() != self.n * m {
            return Err(Error::Dimension(format!(
                "coefficient vector has length {}, expected {}",
                v.len(),
                self.n * m
            )));
        }
        if self.is_zero() {
            return Ok(DVector::zeros(v.len()));
        }
        let x = self.node_states(v);
        let values: Vec<DVector<T>> = (0..self.nodes.len())
            .into_par_iter()
            .map(|l| {
                self.f
                    .eval(&x.column(l).into_owned(), &self.nodes[l])
                    .map_err(|e| Error::at_node(l, e))
            })
            .collect::<Result<_>>()?;
        let mut g = DMatrix::from_columns(&values);
        for (l, &w) in self.weights.iter().enumerate() {
            g.column_mut(l).scale_mut(w);
        }
        let out = g * &self.phi;
        Ok(DVector::from_column_slice(out.as_slice()))
    }

    /// Dense Jacobian; only structural nonzeros of `dF/dx` are integrated.
    pub fn jacobian(&self, v: &DVector<T>) -> Result<DMatrix<T>> {
        let m = self.phi.ncols();
        let n = self.n;
        let mut jac = DMatrix::zeros(n * m, n * m);
        if self.is_zero() {
            return Ok(jac);
        }
        let x = self.node_states(v);
        let jacs: Vec<DMatrix<T>> = (0..self.nodes.len())
            .into_par_iter()
            .map(|l| {
                self.f
                    .jacobian(&x.column(l).into_owned(), &self.nodes[l])
                    .map_err(|e| Error::at_node(l, e))
            })
            .collect::<Result<_>>()?;
        let pattern = self.f.pattern();
        let blocks: Vec<DMatrix<T>> = pattern
            .par_iter()
            .map(|&(a, b)| {
                let g: Vec<T> = self.weights.iter().zip(&jacs).map(|(&w, j)| w * j[(a, b)]).collect();
                weighted_gram(&self.phi, &g)
            })
            .collect();
        for (&(a, b), block) in pattern.iter().zip(&blocks) {
            for i in 0..m {
                for j in 0..m {
                    jac[(i * n + a, j * n + b)] = block[(i, j)];
                }
            }
        }
        Ok(jac)
    }

    /// `T^T J(v) T` without forming the full Jacobian: with `P_a` the values
    /// of the reduced basis restricted to component `a` at the nodes, the
    /// result is `sum_(a,b) P_a^T diag(g J_ab) P_b`.
    pub fn projected_jacobian(&self, v: &DVector<T>, t_r: &DMatrix<T>) -> Result<DMatrix<T>> {
        let (m, n, r) = (self.phi.ncols(), self.n, t_r.ncols());
        let mut out = DMatrix::zeros(r, r);
        if self.is_zero() {
            return Ok(out);
        }
        let x = self.node_states(v);
        let jacs: Vec<DMatrix<T>> = (0..self.nodes.len())
            .into_par_iter()
            .map(|l| {
                self.f
                    .jacobian(&x.column(l).into_owned(), &self.nodes[l])
                    .map_err(|e| Error::at_node(l, e))
            })
            .collect::<Result<_>>()?;
        let pattern = self.f.pattern();
        let p: Vec<DMatrix<T>> = (0..n)
            .into_par_iter()
            .map(|a| &self.phi * DMatrix::from_fn(m, r, |i, j| t_r[(i * n + a, j)]))
            .collect();
        let parts: Vec<DMatrix<T>> = pattern
            .par_iter()
            .map(|&(a, b)| {
                let mut scaled = p[b].clone();
                for (l, (&w, j)) in self.weights.iter().zip(&jacs).enumerate() {
                    scaled.row_mut(l).scale_mut(w * j[(a, b)]);
                }
                p[a].transpose() * scaled
            })
            .collect();
        for part in parts {
            out += part;
        }
        Ok(out)
    }
}

/// One-shot evaluation of the projected nonlinearity.
pub fn galerkin_nonlinear<T: Real>(
    v: &DVector<T>,
    model: &ParametricSystem<T>,
    basis: &BasisSpec<T>,
    rule: &QuadratureRule<T>,
) -> Result<DVector<T>> {
    GalerkinNonlinear::new(model, basis, rule)?.eval(v)
}

/// Block `i` equals `E[x0(p) Phi_i(p)]`; DAE initial values are made
/// consistent node by node before projecting.
pub fn galerkin_initial<T: Real>(
    model: &ParametricSystem<T>,
    basis: &BasisSpec<T>,
    rule: &QuadratureRule<T>,
    opts: &ConsistencyOptions,
) -> Result<DVector<T>> {
    let m = basis.len();
    let n = model.n();
    expect(rule, |p| {
        let x0 = model.consistent_init(p, opts)?;
        let s = basis.evaluate(p)?;
        let mut out = DVector::zeros(n * m);
        for i in 0..m {
            out.rows_mut(i * n, n).copy_from(&(&x0 * s[i]));
        }
        Ok(out)
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GalerkinOptions {
    /// After projecting the node-wise consistent values, move the coupled
    /// initial value onto the coupled algebraic constraints.
    pub correct_initial: bool,
    pub consistency: ConsistencyOptions,
}

impl Default for GalerkinOptions {
    fn default() -> Self {
        GalerkinOptions {
            correct_initial: true,
            consistency: ConsistencyOptions::default(),
        }
    }
}

/// The assembled Galerkin system.
#[derive(Debug, Clone)]
pub struct GalerkinSystem<T: Real> {
    n: usize,
    m: usize,
    n_out: usize,
    is_dae: bool,
    mass: SystemMatrix<T>,
    linear: LinearBlocks<T>,
    nonlinear: GalerkinNonlinear<T>,
    input: Vec<Signal>,
    v0: DVector<T>,
    t0: T,
}

impl<T: Real> GalerkinSystem<T> {
    /// `assembly_rule` integrates the matrices and initial values,
    /// `nonlinear_rule` the nonlinearity.
    pub fn new(
        model: &ParametricSystem<T>,
        basis: &BasisSpec<T>,
        assembly_rule: &QuadratureRule<T>,
        nonlinear_rule: &QuadratureRule<T>,
        opts: &GalerkinOptions,
    ) -> Result<Self> {
        model.validate()?;
        let linear = assemble_linear(model, basis, assembly_rule)?;
        let nonlinear = GalerkinNonlinear::new(model, basis, nonlinear_rule)?;
        let v0 = galerkin_initial(model, basis, assembly_rule, &opts.consistency)?;
        let mut sys = GalerkinSystem {
            n: model.n(),
            m: basis.len(),
            n_out: model.n_out(),
            is_dae: model.is_dae,
            mass: SystemMatrix::Dense(linear.e.clone()),
            linear,
            nonlinear,
            input: model.input.clone(),
            v0,
            t0: model.horizon.0,
        };
        if sys.is_dae && opts.correct_initial {
            sys.v0 = consistent_initial_value(&sys, sys.t0, &sys.v0, &opts.consistency)?;
        }
        Ok(sys)
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn linear(&self) -> &LinearBlocks<T> {
        &self.linear
    }

    pub fn nonlinear_part(&self) -> &GalerkinNonlinear<T> {
        &self.nonlinear
    }

    /// Stacked output coefficients `C v`.
    pub fn output(&self, v: &DVector<T>) -> DVector<T> {
        &self.linear.c * v
    }

    /// Matrices as `name row col value` lines (1-based indices, nonzeros only).
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        for (name, mat) in [
            ("E", &self.linear.e),
            ("A", &self.linear.a),
            ("B", &self.linear.b),
            ("C", &self.linear.c),
        ] {
            write_triplets(&mut out, name, mat)?;
        }
        Ok(())
    }
}

pub fn write_triplets<T: Real, W: Write>(out: &mut W, name: &str, mat: &DMatrix<T>) -> Result<()> {
    for j in 0..mat.ncols() {
        for i in 0..mat.nrows() {
            let v = mat[(i, j)];
            if v != T::zero() {
                writeln!(out, "{name} {} {} {:e}", i + 1, j + 1, to_f64(v))?;
            }
        }
    }
    Ok(())
}

impl<T: Real> ImplicitSystem<T> for GalerkinSystem<T> {
    fn dim(&self) -> usize {
        self.n * self.m
    }

    fn mass(&self) -> &SystemMatrix<T> {
        &self.mass
    }

    fn rhs(&self, t: T, v: &DVector<T>) -> Result<DVector<T>> {
        let mut out = &self.linear.a * v + self.nonlinear.eval(v)?;
        if !self.input.is_empty() {
            out += &self.linear.b * self.input(t);
        }
        Ok(out)
    }

    fn jacobian(&self, _t: T, v: &DVector<T>) -> Result<SystemMatrix<T>> {
        let mut jac = self.linear.a.clone();
        if !self.nonlinear.is_zero() {
            jac += self.nonlinear.jacobian(v)?;
        }
        Ok(SystemMatrix::Dense(jac))
    }
}

impl<T: Real> FullOrderModel<T> for GalerkinSystem<T> {
    fn basis_len(&self) -> usize {
        self.m
    }

    fn n_out(&self) -> usize {
        self.n_out
    }

    fn n_in(&self) -> usize {
        self.input.len()
    }

    fn is_dae(&self) -> bool {
        self.is_dae
    }

    fn output_matrix(&self) -> &DMatrix<T> {
        &self.linear.c
    }

    fn initial_state(&self) -> &DVector<T> {
        &self.v0
    }

    fn input(&self, t: T) -> DVector<T> {
        DVector::from_iterator(self.input.len(), self.input.iter().map(|s| s.eval(t)))
    }

    fn project_linear(&self, t_r: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        let tt = t_r.transpose();
        (
            &tt * &self.linear.e * t_r,
            &tt * &self.linear.a * t_r,
            &tt * &self.linear.b,
        )
    }

    fn nonlinear(&self, v: &DVector<T>) -> Result<DVector<T>> {
        self.nonlinear.eval(v)
    }

    fn has_nonlinearity(&self) -> bool {
        !self.nonlinear.is_zero()
    }

    fn project_nonlinear_jacobian(&self, v: &DVector<T>, t_r: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.nonlinear.projected_jacobian(v, t_r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{scrapie, InitialState, ParamMonomial, ZeroNonlinearity};
    use crate::pcbasis::ParameterBox;
    use crate::quadrature::tensor_rule;

    fn scrapie_setup(per_axis: usize) -> (ParametricSystem<f64>, BasisSpec<f64>, QuadratureRule<f64>) {
        let model = scrapie::<f64>();
        let bx = model.parameter_box(None).unwrap();
        let basis = BasisSpec::total_degree(bx.clone(), 3).unwrap();
        let rule = tensor_rule(&bx, per_axis).unwrap();
        (model, basis, rule)
    }

    #[test]
    fn scrapie_dimension_and_identity_mass() {
        let (model, basis, rule) = scrapie_setup(4);
        let sys = GalerkinSystem::new(&model, &basis, &rule, &rule, &GalerkinOptions::default()).unwrap();
        assert_eq!(ImplicitSystem::dim(&sys), 168);
        assert!((sys.linear().e.clone() - DMatrix::identity(168, 168)).amax() < 1e-12);
        // constant initial value lands on the first block only
        let v0 = sys.initial_state();
        assert!((v0.rows(0, 3) - DVector::from_vec(vec![1.0, 0.0, 0.1])).amax() < 1e-14);
        assert!(v0.rows(3, 165).amax() < 1e-14);
        assert_eq!(sys.output_matrix().shape(), (168, 168));
    }

    #[test]
    fn affine_matrix_blocks_match_triple_moments() {
        // q = 1 on [1, 3]: p = 2 + xi, Phi_0 = 1, Phi_1 = sqrt(3) xi, Phi_2 = sqrt(5)(3 xi^2 - 1)/2
        // E[Phi_i Phi_j p] = 2 delta_ij + E[xi Phi_i Phi_j]
        let bx = ParameterBox::new(vec![1.0], vec![3.0], vec![2.0]).unwrap();
        let basis = BasisSpec::total_degree(bx.clone(), 2).unwrap();
        let rule = tensor_rule(&bx, 4).unwrap();
        let a = ParamMatrix::constant(DMatrix::from_element(1, 1, 0.5)).with(0, 0, ParamMonomial::linear(1.0, 0));
        let model = ParametricSystem {
            name: "affine".into(),
            parameter_names: vec!["p".into()],
            nominal: vec![2.0],
            variation: 0.5,
            horizon: (0.0, 1.0),
            e: ParamMatrix::identity(1),
            a,
            b: ParamMatrix::zeros(1, 0),
            c: ParamMatrix::identity(1),
            f: Arc::new(ZeroNonlinearity { n: 1 }),
            x0: InitialState::Parametric(Arc::new(|p: &[f64]| DVector::from_element(1, p[0]))),
            input: vec![],
            output_names: vec!["x".into()],
            is_dae: false,
        };
        let blocks = assemble_linear(&model, &basis, &rule).unwrap();
        let e01 = 1.0 / 3f64.sqrt(); // E[xi * sqrt3 xi] = sqrt3/3
        let e12 = 2.0 / 15f64.sqrt(); // E[xi Phi_1 Phi_2]
        let expected = DMatrix::from_row_slice(3, 3, &[2.5, e01, 0.0, e01, 2.5, e12, 0.0, e12, 2.5]);
        assert!((blocks.a - expected).amax() < 1e-14);

        // x0(p) = p projects onto Phi_0 and Phi_1 only
        let v0 = galerkin_initial(&model, &basis, &rule, &ConsistencyOptions::default()).unwrap();
        assert!((v0[0] - 2.0).abs() < 1e-14);
        assert!((v0[1] - e01).abs() < 1e-14);
        assert!(v0[2].abs() < 1e-14);
    }

    #[test]
    fn linear_nonlinearity_reproduces_coefficients() {
        use crate::models::{PolynomialNonlinearity, PolynomialTerm};
        let (mut model, basis, rule) = scrapie_setup(4);
        let terms = (0..3)
            .map(|k| PolynomialTerm {
                row: k,
                coeff: ParamMonomial::constant(1.0),
                powers: vec![(k, 1)],
            })
            .collect();
        model.f = Arc::new(PolynomialNonlinearity::new(3, terms).unwrap());
        let v = DVector::from_fn(168, |i, _| ((i * 37 % 11) as f64 - 5.0) / 7.0);
        let fv = galerkin_nonlinear(&v, &model, &basis, &rule).unwrap();
        assert!((fv - &v).amax() < 1e-13);
    }

    #[test]
    fn zero_nonlinearity_is_zero() {
        let (mut model, basis, rule) = scrapie_setup(2);
        model.f = Arc::new(ZeroNonlinearity { n: 3 });
        let v = DVector::from_element(168, 1.0);
        assert_eq!(
            galerkin_nonlinear(&v, &model, &basis, &rule).unwrap(),
            DVector::zeros(168)
        );
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (model, basis, rule) = scrapie_setup(4);
        let sys = GalerkinSystem::new(&model, &basis, &rule, &rule, &GalerkinOptions::default()).unwrap();
        let v = DVector::from_fn(168, |i, _| {
            if i < 3 {
                [0.8, 0.1, 0.2][i]
            } else {
                0.01 * ((i % 5) as f64 - 2.0)
            }
        });
        let jac = ImplicitSystem::jacobian(&sys, 0.0, &v).unwrap().to_dense();
        let fd = crate::timeint::finite_difference_jacobian(&sys, 0.0, &v)
            .unwrap()
            .to_dense();
        assert!((jac - fd).amax() < 1e-6);
    }

    #[test]
    fn projected_jacobian_matches_full_projection() {
        let (model, basis, rule) = scrapie_setup(3);
        let nl = GalerkinNonlinear::new(&model, &basis, &rule).unwrap();
        let v = DVector::from_fn(168, |i, _| {
            if i < 3 {
                [0.8, 0.1, 0.2][i]
            } else {
                0.02 * ((i % 7) as f64 - 3.0)
            }
        });
        let t_r = DMatrix::from_fn(168, 5, |i, j| (((i + 2) * (j + 5)) % 11) as f64 / 11.0 - 0.5);
        let full = t_r.transpose() * nl.jacobian(&v).unwrap() * &t_r;
        assert!((nl.projected_jacobian(&v, &t_r).unwrap() - full).amax() < 1e-12);
    }

    #[test]
    fn block_symmetry() {
        let (model, basis, rule) = scrapie_setup(4);
        let blocks = assemble_linear(&model, &basis, &rule).unwrap();
        let n = 3;
        for i in 0..56 {
            for j in 0..56 {
                let bij = blocks.a.view((i * n, j * n), (n, n));
                let bji = blocks.a.view((j * n, i * n), (n, n));
                assert!((bij - bji).amax() < 1e-15);
            }
        }
    }

    #[test]
    fn triplets_list_nonzeros() {
        let mut buf = Vec::new();
        write_triplets(&mut buf, "M", &DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0])).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "M 1 2 2e0\n");
    }
}
