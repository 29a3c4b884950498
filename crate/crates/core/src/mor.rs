//! Proper orthogonal decomposition and projection-based reduced models.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::fom::FullOrderModel;
use crate::linalg::SystemMatrix;
use crate::scalar::{lit, to_f64, Real};
use crate::timeint::ImplicitSystem;

/// Thin SVD of a snapshot matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PodResult<T: Real> {
    /// Nonincreasing, length `min(N, l)`.
    pub singular_values: Vec<T>,
    /// `N x min(N, l)` with orthonormal columns.
    pub left_vectors: DMatrix<T>,
    /// Right singular vectors as columns, `l x min(N, l)`.
    pub right_vectors: DMatrix<T>,
    pub snapshot_count: usize,
    pub state_dim: usize,
}

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-14;

/// Snapshots are used as they are (no centering). Tall matrices are first
/// reduced by a QR factorization so the SVD runs on the small triangular factor.
pub fn pod<T: Real>(snapshots: &DMatrix<T>) -> Result<PodResult<T>> {
    let (n, l) = snapshots.shape();
    if l == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty snapshot matrix".into()));
    }
    if snapshots.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "snapshot matrix".into(),
        });
    }
    let (u, s, vt) = if n > l {
        let qr = snapshots.clone().qr();
        let (q, r) = qr.unpack();
        let svd = SVD::new(r, true, true);
        (q * svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap())
    } else {
        let svd = SVD::new(snapshots.clone(), true, true);
        (svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap())
    };
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| {
        s[b].partial_cmp(&s[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let k = s.len();
    let mut left = DMatrix::zeros(n, k);
    let mut right = DMatrix::zeros(l, k);
    let mut values = Vec::with_capacity(k);
    for (j, &src) in order.iter().enumerate() {
        let mut uj = u.column(src).into_owned();
        let mut vj = vt.row(src).transpose();
        // sign convention: first entry that is not negligible is positive
        let cut = uj.amax() * lit(1e-8);
        if let Some(first) = uj.iter().find(|v| v.abs() > cut) {
            if *first < T::zero() {
                uj = -uj;
                vj = -vj;
            }
        }
        left.set_column(j, &uj);
        right.set_column(j, &vj);
        values.push(s[src]);
    }
    Ok(PodResult {
        singular_values: values,
        left_vectors: left,
        right_vectors: right,
        snapshot_count: l,
        state_dim: n,
    })
}

impl<T: Real> PodResult<T> {
    /// Number of singular values above `RANK_TOL * sigma_1`.
    pub fn numerical_rank(&self) -> usize {
        let cut = self.singular_values.first().copied().unwrap_or(T::zero()) * lit(RANK_TOL);
        self.singular_values.iter().filter(|&&s| s > cut).count()
    }

    /// `sigma_{r+1}`, zero when `r` exhausts the spectrum.
    pub fn sigma_next(&self, r: usize) -> T {
        self.singular_values.get(r).copied().unwrap_or(T::zero())
    }

    /// Rank-`r` truncation `sum_{i<=r} sigma_i u_i q_i^T`.
    pub fn truncated(&self, r: usize) -> DMatrix<T> {
        let r = r.min(self.singular_values.len());
        let u = self.left_vectors.columns(0, r);
        let mut v = self.right_vectors.columns(0, r).into_owned();
        for (j, s) in self.singular_values.iter().take(r).enumerate() {
            v.column_mut(j).scale_mut(*s);
        }
        u * v.transpose()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,sigma")?;
        for (i, s) in self.singular_values.iter().enumerate() {
            writeln!(out, "{},{:e}", i + 1, to_f64(*s))?;
        }
        Ok(())
    }
}

/// The `r` dominant left singular vectors.
pub fn projection_basis<T: Real>(pod: &PodResult<T>, r: usize) -> Result<DMatrix<T>> {
    let available = pod.left_vectors.ncols();
    if r == 0 || r > available {
        return Err(Error::ReducedDimension { r, available });
    }
    Ok(pod.left_vectors.columns(0, r).into_owned())
}

/// Galerkin-type reduced model `E v' = A v + T^T F(T v) + B u` with
/// `E = T^T E T`, `A = T^T A T`, `B = T^T B`.
#[derive(Debug)]
pub struct ReducedModel<'a, T: Real, F: FullOrderModel<T> + ?Sized> {
    fom: &'a F,
    t_r: DMatrix<T>,
    mass: SystemMatrix<T>,
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
    v0: DVector<T>,
}

pub fn reduce<'a, T: Real, F: FullOrderModel<T> + ?Sized>(
    fom: &'a F,
    t_r: &DMatrix<T>,
) -> Result<ReducedModel<'a, T, F>> {
    if t_r.nrows() != fom.dim() || t_r.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "projection matrix is {}x{}, system dimension {}",
            t_r.nrows(),
            t_r.ncols(),
            fom.dim()
        )));
    }
    let (e, a, b) = fom.project_linear(t_r);
    Ok(ReducedModel {
        fom,
        c: fom.output_matrix() * t_r,
        v0: t_r.transpose() * fom.initial_state(),
        t_r: t_r.clone(),
        mass: SystemMatrix::Dense(e),
        a,
        b,
    })
}

impl<T: Real, F: FullOrderModel<T> + ?Sized> ReducedModel<'_, T, F> {
    pub fn r(&self) -> usize {
        self.t_r.ncols()
    }

    pub fn projection(&self) -> &DMatrix<T> {
        &self.t_r
    }

    pub fn e(&self) -> DMatrix<T> {
        self.mass.to_dense()
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    /// Output matrix `C T` (`m n_out x r`); its columns are the Phi-coordinates
    /// of the new basis functions.
    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn initial_state(&self) -> &DVector<T> {
        &self.v0
    }

    /// `T v`.
    pub fn lift(&self, v: &DVector<T>) -> DVector<T> {
        &self.t_r * v
    }
}

impl<T: Real, F: FullOrderModel<T> + ?Sized> ImplicitSystem<T> for ReducedModel<'_, T, F> {
    fn dim(&self) -> usize {
        self.t_r.ncols()
    }

    fn mass(&self) -> &SystemMatrix<T> {
        &self.mass
    }

    fn rhs(&self, t: T, v: &DVector<T>) -> Result<DVector<T>> {
        let mut out = &self.a * v;
        if self.fom.has_nonlinearity() {
            out += self.t_r.transpose() * self.fom.nonlinear(&self.lift(v))?;
        }
        if self.fom.n_in() > 0 {
            out += &self.b * self.fom.input(t);
        }
        Ok(out)
    }

    fn jacobian(&self, _t: T, v: &DVector<T>) -> Result<SystemMatrix<T>> {
        let mut jac = self.a.clone();
        if self.fom.has_nonlinearity() {
            jac += self.fom.project_nonlinear_jacobian(&self.lift(v), &self.t_r)?;
        }
        Ok(SystemMatrix::Dense(jac))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rank_one() {
        let u = DVector::from_vec(vec![1.0f64, 2.0, -1.0, 0.5]);
        let v = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        let p = pod(&(&u * v.transpose())).unwrap();
        assert!(p.singular_values[1] < 1e-13 * p.singular_values[0]);
        assert!((p.singular_values[0] - u.norm() * v.norm()).abs() < 1e-12);
        assert_eq!(p.numerical_rank(), 1);
    }

    #[test]
    fn orthogonal_columns_give_sorted_norms() {
        let m = DMatrix::from_row_slice(4, 3, &[1.0f64, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let p = pod(&m).unwrap();
        for (s, e) in p.singular_values.iter().zip([3.0f64, 2.0, 1.0]) {
            assert!((s - e).abs() < 1e-14);
        }
        let u0 = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
        assert!((p.left_vectors.column(0) - u0).amax() < 1e-14);
    }

    #[test]
    fn reconstruction_and_truncation_error() {
        for (rows, cols, seed) in [(20, 10, 1), (10, 20, 2), (15, 15, 3)] {
            let v = random(rows, cols, seed);
            let p = pod(&v).unwrap();
            let k = rows.min(cols);
            assert!((p.truncated(k) - &v).amax() < 1e-12);
            let ortho = p.left_vectors.transpose() * &p.left_vectors;
            assert!((ortho - DMatrix::identity(k, k)).amax() < 1e-12);
            for r in 1..k {
                let err: f64 = (&v - p.truncated(r)).svd(false, false).singular_values.max();
                assert!((err - p.singular_values[r]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn frobenius_residual_of_projection() {
        let v = random(30, 8, 4);
        let p = pod(&v).unwrap();
        for r in 1..=8 {
            let t = projection_basis(&p, r).unwrap();
            let res = &v - &t * (t.transpose() * &v);
            let tail: f64 = p.singular_values[r..].iter().map(|s| s * s).sum();
            assert!((res.norm_squared() - tail).abs() < 1e-10);
        }
        assert!(matches!(projection_basis(&p, 9), Err(Error::ReducedDimension { .. })));
        assert!(projection_basis(&p, 0).is_err());
    }

    #[test]
    fn sign_convention_and_determinism() {
        let v = random(12, 5, 5);
        let a = pod(&v).unwrap();
        let b = pod(&(-&v)).unwrap();
        assert_eq!(a, pod(&v).unwrap());
        assert!((a.left_vectors.clone() - &b.left_vectors).amax() < 1e-12);
        for j in 0..5 {
            let col = a.left_vectors.column(j);
            let first = col.iter().find(|x| x.abs() > 1e-8 * col.amax()).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut v = random(3, 3, 6);
        v[(1, 1)] = f64::NAN;
        assert!(matches!(pod(&v), Err(Error::NonFinite { .. })));
    }
    fn scrapie_fom() -> crate::galerkin::GalerkinSystem<f64> {
        use crate::galerkin::{GalerkinOptions, GalerkinSystem};
        let model = crate::models::scrapie::<f64>();
        let bx = model.parameter_box(None).unwrap();
        let basis = crate::pcbasis::BasisSpec::total_degree(bx.clone(), 2).unwrap();
        let rule = crate::quadrature::tensor_rule(&bx, 3).unwrap();
        GalerkinSystem::new(&model, &basis, &rule, &rule, &GalerkinOptions::default()).unwrap()
    }

    #[test]
    fn reduced_matrices_are_projections() {
        let fom = scrapie_fom();
        let n = fom.dim();
        let t = pod(&random(n, 6, 7)).unwrap().left_vectors;
        let rom = reduce(&fom, &t).unwrap();
        assert!((rom.e() - DMatrix::identity(6, 6)).amax() < 1e-13);
        let v = DVector::from_fn(6, |i, _| 0.1 * (i as f64 + 1.0));
        let full = &fom.linear().a * (&t * &v);
        assert!((rom.a() * &v - t.transpose() * full).amax() < 1e-12);
        let lifted = &t * &v;
        let expected = t.transpose() * ImplicitSystem::rhs(&fom, 0.0, &lifted).unwrap();
        assert!((rom.rhs(0.0, &v).unwrap() - expected).amax() < 1e-12);
        assert_eq!(rom.initial_state(), &(t.transpose() * fom.initial_state()));
    }

    #[test]
    fn congruence_keeps_negative_definiteness() {
        let x = random(12, 12, 8);
        let a = -(&x * x.transpose()) - DMatrix::identity(12, 12);
        let t = pod(&random(12, 4, 9)).unwrap().left_vectors;
        let ar = t.transpose() * a * &t;
        let eig = ar.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&l| l < 0.0));
    }

    #[test]
    fn full_dimension_reproduces_fom() {
        use crate::timeint::{integrate, IntegratorConfig};
        let fom = scrapie_fom();
        let n = fom.dim();
        let t = pod(&random(n, n, 10)).unwrap().left_vectors;
        let rom = reduce(&fom, &t).unwrap();
        let cfg = IntegratorConfig::trapezoidal(1e-6, 1e-9);
        let full = integrate(&fom, (0.0, 100.0), fom.initial_state(), &cfg).unwrap();
        let red = integrate(&rom, (0.0, 100.0), rom.initial_state(), &cfg).unwrap();
        let diff = full.final_state() - rom.lift(red.final_state());
        assert!(diff.amax() < 1e-5, "{}", diff.amax());
    }
}
