use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use stochmor::analysis::statistics;
use stochmor::lowdim::{best_approximation, evaluate_qoi, Representation};
use stochmor::mor::pod;
use stochmor::pcbasis::{gram_matrix, BasisSpec, ParameterBox};
use stochmor::pipeline::{RunConfig, BUNDLED};
use stochmor::quadrature::{expect, sparse_grid, tensor_rule, GrowthRule};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn sized_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..30, 2usize..12).prop_flat_map(|(r, c)| matrix(r, c))
}

fn parameter_box(q: usize) -> impl Strategy<Value = ParameterBox<f64>> {
    prop::collection::vec((-3.0f64..3.0, 0.1f64..2.0), q).prop_map(|axes| {
        let lower: Vec<f64> = axes.iter().map(|(a, _)| *a).collect();
        let upper: Vec<f64> = axes.iter().map(|(a, w)| a + w).collect();
        let mid = lower.iter().zip(&upper).map(|(a, b)| 0.5 * (a + b)).collect();
        ParameterBox::new(lower, upper, mid).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pod_vectors_are_orthonormal_and_values_sorted(v in sized_matrix()) {
        let p = pod(&v).unwrap();
        let k = p.left_vectors.ncols();
        let gram = p.left_vectors.transpose() * &p.left_vectors;
        prop_assert!((gram - DMatrix::<f64>::identity(k, k)).amax() < 1e-12);
        prop_assert!(p.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((p.truncated(k) - &v).amax() < 1e-12);
    }

    #[test]
    fn pod_truncation_beats_other_subspaces(v in sized_matrix(), w in matrix(30, 12), r in 1usize..6) {
        let p = pod(&v).unwrap();
        let r = r.min(p.left_vectors.ncols());
        let pod_err = (&v - p.truncated(r)).norm();
        // any other r-dimensional subspace, from the leading columns of w
        let q = w.rows(0, v.nrows()).columns(0, r).into_owned().qr().q();
        let other_err = (&v - &q * (q.transpose() * &v)).norm();
        prop_assert!(pod_err <= other_err + 1e-12);
    }

    #[test]
    fn best_approximation_beats_other_coefficients(
        w_hat in matrix(12, 5),
        c_bar in matrix(12, 4),
        shift in prop::collection::vec(-0.5f64..0.5, 4),
    ) {
        let fom = Representation::phi((0..5).map(f64::from).collect(), w_hat.clone()).unwrap();
        let best = best_approximation(&fom, &c_bar).unwrap();
        let fitted = best.phi_coordinates();
        let shift = DVector::from_vec(shift);
        for j in 0..5 {
            let best_err = (w_hat.column(j) - fitted.column(j)).norm();
            let other = &c_bar * (best.coeffs().column(j) + &shift);
            prop_assert!(best_err <= (w_hat.column(j) - other).norm() + 1e-12);
            // the residual is orthogonal to the subspace
            prop_assert!((c_bar.transpose() * (w_hat.column(j) - fitted.column(j))).amax() < 1e-10);
        }
    }

    #[test]
    fn basis_is_orthonormal_on_any_box(bx in parameter_box(3), d in 0usize..4) {
        let basis = BasisSpec::total_degree(bx, d).unwrap();
        let rule = tensor_rule(basis.parameter_box(), d + 1).unwrap();
        let g = gram_matrix(&basis, &rule).unwrap();
        prop_assert!((g - DMatrix::<f64>::identity(basis.len(), basis.len())).amax() < 1e-12);
    }

    #[test]
    fn sparse_and_tensor_rules_agree_on_low_degree(bx in parameter_box(3), c in prop::collection::vec(-2.0f64..2.0, 4)) {
        // total degree 3 is integrated exactly by both
        let f = |p: &[f64]| Ok(DVector::from_element(1, c[0] + c[1] * p[0] * p[1] + c[2] * p[2].powi(3) + c[3] * p[0] * p[1] * p[2]));
        let sparse = expect(&sparse_grid(&bx, 3, GrowthRule::Linear).unwrap(), f).unwrap()[0];
        let tensor = expect(&tensor_rule(&bx, 2).unwrap(), f).unwrap()[0];
        prop_assert!((sparse - tensor).abs() < 1e-10 * (1.0 + tensor.abs()));
    }

    #[test]
    fn moments_match_pointwise_evaluation(bx in parameter_box(2), coeffs in prop::collection::vec(-1.0f64..1.0, 6)) {
        let basis = BasisSpec::total_degree(bx, 2).unwrap();
        let rep = Representation::phi(vec![0.0], DMatrix::from_vec(6, 1, coeffs)).unwrap();
        let rule = tensor_rule(basis.parameter_box(), 3).unwrap();
        let moments = expect(&rule, |p| {
            let y = evaluate_qoi(&rep, &basis, 0.0, p)?;
            Ok(DVector::from_vec(vec![y, y * y]))
        })
        .unwrap();
        let stats = statistics(&rep);
        prop_assert!((stats.mean[0] - moments[0]).abs() < 1e-12);
        let var = moments[1] - moments[0] * moments[0];
        prop_assert!((stats.std[0].powi(2) - var).abs() < 1e-11);
    }
}

#[test]
fn bundled_configs_round_trip() {
    for name in BUNDLED {
        let cfg = RunConfig::load(name).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again, "{name}");
        assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
    }
}
