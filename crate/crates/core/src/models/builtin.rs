use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{
    DiodeNonlinearity, InitialState, ParamMatrix, ParamMonomial, ParametricSystem, PolynomialNonlinearity,
    PolynomialTerm, Signal,
};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub const BUILTIN_MODELS: [&str; 2] = ["scrapie", "transistor_amplifier"];

pub fn builtin<T: Real>(name: &str) -> Result<ParametricSystem<T>> {
    match name {
        "scrapie" => Ok(scrapie()),
        "transistor_amplifier" => Ok(transistor_amplifier()),
        other => Err(Error::Model(format!(
            "unknown model '{other}', expected one of {BUILTIN_MODELS:?}"
        ))),
    }
}

/// Scrapie reaction kinetics (Deuflhard/Bornemann):
///
/// ```text
/// x1' = -p1 x1 + p2 x2 - p5 x1 x3
/// x2' =  p1 x1 - p2 x2 - 2 p3 x2^2 + 2 p4 x3 + p5 x1 x3
/// x3' =  p3 x2^2 - p4 x3
/// ```
///
/// All linear terms sit in `A(p)`, the quadratic ones in `F`. Every state is
/// an output.
pub fn scrapie<T: Real>() -> ParametricSystem<T> {
    let one = T::one();
    let a = ParamMatrix::zeros(3, 3)
        .with(0, 0, ParamMonomial::linear(-one, 0))
        .with(1, 0, ParamMonomial::linear(one, 0))
        .with(0, 1, ParamMonomial::linear(one, 1))
        .with(1, 1, ParamMonomial::linear(-one, 1))
        .with(1, 2, ParamMonomial::linear(lit(2.0), 3))
        .with(2, 2, ParamMonomial::linear(-one, 3));
    let term = |row, c: f64, j, powers| PolynomialTerm {
        row,
        coeff: ParamMonomial::linear(lit(c), j),
        powers,
    };
    let f = PolynomialNonlinearity::new(
        3,
        vec![
            term(0, -1.0, 4, vec![(0, 1), (2, 1)]),
            term(1, -2.0, 2, vec![(1, 2)]),
            term(1, 1.0, 4, vec![(0, 1), (2, 1)]),
            term(2, 1.0, 2, vec![(1, 2)]),
        ],
    )
    .expect("static terms are valid");
    ParametricSystem {
        name: "scrapie".into(),
        parameter_names: (1..=5).map(|i| format!("p{i}")).collect(),
        nominal: [1e-5, 0.1, 1.0, 1e-4, 0.1].iter().map(|&v| lit(v)).collect(),
        variation: lit(0.1),
        horizon: (T::zero(), lit(500.0)),
        e: ParamMatrix::identity(3),
        a,
        b: ParamMatrix::zeros(3, 0),
        c: ParamMatrix::identity(3),
        f: Arc::new(f),
        x0: InitialState::Constant(DVector::from_vec(vec![one, T::zero(), lit(0.1)])),
        input: Vec::new(),
        output_names: (1..=3).map(|i| format!("x{i}")).collect(),
        is_dae: false,
    }
}

const R0: usize = 0;
const R1: usize = 1;
const R2: usize = 2;
const R3: usize = 3;
const R4: usize = 4;
const R5: usize = 5;
const C1: usize = 6;
const C2: usize = 7;
const C3: usize = 8;
const UB: usize = 9;

/// One-transistor amplifier from Hairer/Wanner, *Solving ODEs II*, as an
/// index-1 DAE in the five node voltages.
///
/// ```text
/// C1 (U1' - U2') = (Ue(t) - U1)/R0
/// C1 (U2' - U1') = (Ub - U2)/R2 - U2/R1 - 0.01 f(U2 - U3)
/// C2 U3'         = f(U2 - U3) - U3/R3
/// C3 (U4' - U5') = (Ub - U4)/R4 - 0.99 f(U2 - U3)
/// C3 (U5' - U4') = -U5/R5
/// ```
///
/// with `f(U) = 1e-6 (exp(U/0.026) - 1)` and `Ue(t) = 0.4 sin(200 pi t)`.
/// Parameters are `R0..R5, C1..C3, Ub` with nominal values `R0 = 1000`,
/// `Rk = 9000`, `Ck = k * 1e-6`, `Ub = 6`. The operating voltage enters `B`,
/// so the second input is the constant 1. The output is `U5`.
pub fn transistor_amplifier<T: Real>() -> ParametricSystem<T> {
    let one = T::one();
    let inv = |j| ParamMonomial::new(-one, vec![(j, -1)]);
    let cap = |c: f64, j| ParamMonomial::linear(lit(c), j);
    let e = ParamMatrix::zeros(5, 5)
        .with(0, 0, cap(1.0, C1))
        .with(0, 1, cap(-1.0, C1))
        .with(1, 0, cap(-1.0, C1))
        .with(1, 1, cap(1.0, C1))
        .with(2, 2, cap(1.0, C2))
        .with(3, 3, cap(1.0, C3))
        .with(3, 4, cap(-1.0, C3))
        .with(4, 3, cap(-1.0, C3))
        .with(4, 4, cap(1.0, C3));
    let a = ParamMatrix::zeros(5, 5)
        .with(0, 0, inv(R0))
        .with(1, 1, inv(R1))
        .with(1, 1, inv(R2))
        .with(2, 2, inv(R3))
        .with(3, 3, inv(R4))
        .with(4, 4, inv(R5));
    let b = ParamMatrix::zeros(5, 2)
        .with(0, 0, ParamMonomial::new(one, vec![(R0, -1)]))
        .with(1, 1, ParamMonomial::new(one, vec![(UB, 1), (R2, -1)]))
        .with(3, 1, ParamMonomial::new(one, vec![(UB, 1), (R4, -1)]));
    let mut c = DMatrix::zeros(1, 5);
    c[(0, 4)] = one;
    let f = DiodeNonlinearity {
        n: 5,
        plus: 1,
        minus: 2,
        beta: lit(1e-6),
        u_f: lit(0.026),
        gains: vec![(1, lit(-0.01)), (2, one), (3, lit(-0.99))],
    };
    let x0 = |p: &[T]| {
        let u2 = p[UB] * p[R1] / (p[R1] + p[R2]);
        DVector::from_vec(vec![T::zero(), u2, u2, p[UB], T::zero()])
    };
    let nominal = [1000.0, 9000.0, 9000.0, 9000.0, 9000.0, 9000.0, 1e-6, 2e-6, 3e-6, 6.0];
    ParametricSystem {
        name: "transistor_amplifier".into(),
        parameter_names: ["R0", "R1", "R2", "R3", "R4", "R5", "C1", "C2", "C3", "Ub"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        nominal: nominal.iter().map(|&v| lit(v)).collect(),
        variation: lit(0.01),
        horizon: (T::zero(), lit(0.01)),
        e,
        a,
        b,
        c: ParamMatrix::constant(c),
        f: Arc::new(f),
        x0: InitialState::Parametric(Arc::new(x0)),
        input: vec![
            Signal::Sine {
                amplitude: 0.4,
                period: 0.01,
                phase: 0.0,
            },
            Signal::Constant { value: 1.0 },
        ],
        output_names: vec!["U5".into()],
        is_dae: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeint::{algebraic_residual, ConsistencyOptions, ImplicitSystem};

    #[test]
    fn registry() {
        assert!(builtin::<f64>("scrapie").is_ok());
        assert!(builtin::<f64>("transistor_amplifier").is_ok());
        assert!(matches!(builtin::<f64>("nope"), Err(Error::Model(_))));
        for name in BUILTIN_MODELS {
            builtin::<f64>(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn scrapie_rhs_at_zero_state_vanishes() {
        let m = scrapie::<f64>();
        let p = m.nominal.clone();
        let r = m.eval_rhs(0.0, &DVector::zeros(3), &p).unwrap();
        assert_eq!(r, DVector::zeros(3));
    }

    #[test]
    fn scrapie_rhs_matches_hand_substitution() {
        let m = scrapie::<f64>();
        let (p1, p2, p3, p4, p5) = (1e-5, 0.1, 1.0, 1e-4, 0.1);
        let x = [1.0, 0.0, 0.1];
        let expected = [
            -p1 * x[0] + p2 * x[1] - p5 * x[0] * x[2],
            p1 * x[0] - p2 * x[1] - 2.0 * p3 * x[1] * x[1] + 2.0 * p4 * x[2] + p5 * x[0] * x[2],
            p3 * x[1] * x[1] - p4 * x[2],
        ];
        let r = m
            .eval_rhs(0.0, &DVector::from_vec(x.to_vec()), &[p1, p2, p3, p4, p5])
            .unwrap();
        for i in 0..3 {
            assert!((r[i] - expected[i]).abs() < 1e-18, "{i}");
        }
        // same values written out: (-1e-5 - 0.01, 1e-5 + 2e-5 + 0.01, -1e-5)
        assert!((r[0] - (-1e-5 - 0.01)).abs() < 1e-17);
        assert!((r[1] - (1e-5 + 2e-5 + 0.01)).abs() < 1e-17);
        assert!((r[2] + 1e-5).abs() < 1e-18);
    }

    #[test]
    fn scrapie_dimensions() {
        let m = scrapie::<f64>();
        assert_eq!((m.n(), m.q(), m.n_in(), m.n_out()), (3, 5, 0, 3));
    }

    #[test]
    fn amplifier_mass_rank_and_index() {
        let m = transistor_amplifier::<f64>();
        let bx = m.parameter_box(None).unwrap();
        for p in [bx.lower().to_vec(), m.nominal.clone(), bx.upper().to_vec()] {
            let sv = m.e.eval(&p).singular_values();
            let rank = sv.iter().filter(|&&s| s > 1e-12 * sv.max()).count();
            assert_eq!(rank, 3);
        }
        // algebraic block of the Jacobian is nonsingular at x0
        let node = m.at(&m.nominal).unwrap();
        let x0 = m.x0.eval(&m.nominal);
        let (left, right) = crate::linalg::null_spaces(&m.e.eval(&m.nominal), 1e-12);
        let jac = node.jacobian(0.0, &x0).unwrap().to_dense();
        let block = left.transpose() * jac * right;
        assert!(block.determinant().abs() > 1e-12);
    }

    #[test]
    fn amplifier_initial_values_are_consistent() {
        let m = transistor_amplifier::<f64>();
        let opts = ConsistencyOptions::default();
        let x_nom = m.consistent_init(&m.nominal, &opts).unwrap();
        let node = m.at(&m.nominal).unwrap();
        assert!(algebraic_residual(&node, 0.0, &x_nom, 1e-12).unwrap() < 1e-12);
        assert!((x_nom[1] - 3.0).abs() < 1e-12);

        let bx = m.parameter_box(None).unwrap();
        let mut p = m.nominal.clone();
        p[R1] = bx.upper()[R1];
        p[UB] = bx.lower()[UB];
        let x_pert = m.consistent_init(&p, &opts).unwrap();
        assert!((x_pert - &x_nom).amax() > 1e-3);
    }

    #[test]
    fn amplifier_initial_derivative_satisfies_mass_equation() {
        let m = transistor_amplifier::<f64>();
        let node = m.at(&m.nominal).unwrap();
        let x0 = m.consistent_init(&m.nominal, &ConsistencyOptions::default()).unwrap();
        let mut stats = Default::default();
        let xd = crate::timeint::initial_derivative(&node, 0.0, &x0, &mut stats).unwrap();
        let residual = node.mass().mul_vec(&xd) - node.rhs(0.0, &x0).unwrap();
        assert!(residual.amax() < 1e-12);
    }

    #[test]
    fn rhs_is_pure() {
        let m = transistor_amplifier::<f64>();
        let x = DVector::from_vec(vec![0.1, 2.9, 2.8, 5.9, 0.05]);
        let a = m.eval_rhs(0.003, &x, &m.nominal).unwrap();
        let b = m.eval_rhs(0.003, &x, &m.nominal).unwrap();
        assert_eq!(a, b);
    }
}
