//! Multivariate orthonormal Legendre bases for independent uniform parameters.
//!
//! Each parameter `p_j` is uniformly distributed on `[lower_j, upper_j]`. The
//! affine map `xi_j = (2 p_j - lower_j - upper_j) / (upper_j - lower_j)` sends
//! it to `[-1, 1]`, where the univariate orthonormal polynomials are
//! `sqrt(2k + 1) P_k(xi)` with `P_k` the classical Legendre polynomials. A
//! multivariate basis function is a product of univariate ones, one per
//! coordinate, indexed by a multi-index of total degree at most `d`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Box of admissible parameter values with a nominal point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox<T> {
    lower: Vec<T>,
    upper: Vec<T>,
    nominal: Vec<T>,
}

impl<T: Real> ParameterBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>, nominal: Vec<T>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidArgument("parameter box needs q >= 1".into()));
        }
        if lower.len() != upper.len() || lower.len() != nominal.len() {
            return Err(Error::Dimension(format!(
                "box bounds have lengths {}, {}, {}",
                lower.len(),
                upper.len(),
                nominal.len()
            )));
        }
        for j in 0..lower.len() {
            if !(lower[j] < upper[j]) {
                return Err(Error::InvalidArgument(format!(
                    "box coordinate {j}: lower {} is not below upper {}",
                    to_f64(lower[j]),
                    to_f64(upper[j])
                )));
            }
            if nominal[j] < lower[j] || nominal[j] > upper[j] {
                return Err(Error::InvalidArgument(format!(
                    "nominal value {} of coordinate {j} lies outside the box",
                    to_f64(nominal[j])
                )));
            }
        }
        Ok(ParameterBox { lower, upper, nominal })
    }

    /// Box `nominal * (1 -/+ variation)` around each nominal value.
    pub fn around_nominal(nominal: &[T], variation: T) -> Result<Self> {
        if !(variation > T::zero()) {
            return Err(Error::InvalidArgument("relative variation must be positive".into()));
        }
        let mut lower = Vec::with_capacity(nominal.len());
        let mut upper = Vec::with_capacity(nominal.len());
        for &v in nominal {
            let half = (v * variation).abs();
            if half == T::zero() {
                return Err(Error::InvalidArgument(
                    "relative variation of a zero nominal value is empty".into(),
                ));
            }
            lower.push(v - half);
            upper.push(v + half);
        }
        Self::new(lower, upper, nominal.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn nominal(&self) -> &[T] {
        &self.nominal
    }

    pub fn midpoint(&self) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&a, &b)| (a + b) * lit::<T>(0.5))
            .collect()
    }

    /// Checks `p` against the box, allowing a relative slack for boundary nodes.
    pub fn check(&self, p: &[T]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "parameter vector has length {}, box has {}",
                p.len(),
                self.dim()
            )));
        }
        let slack = lit::<T>(1e-12);
        for (j, &v) in p.iter().enumerate() {
            let width = self.upper[j] - self.lower[j];
            if !(v >= self.lower[j] - slack * width && v <= self.upper[j] + slack * width) {
                return Err(Error::OutsideBox {
                    coord: j,
                    value: to_f64(v),
                    lower: to_f64(self.lower[j]),
                    upper: to_f64(self.upper[j]),
                });
            }
        }
        Ok(())
    }

    /// Affine map of coordinate `j` onto `[-1, 1]`.
    #[inline]
    pub fn to_standard(&self, j: usize, v: T) -> T {
        (lit::<T>(2.0) * v - self.lower[j] - self.upper[j]) / (self.upper[j] - self.lower[j])
    }

    /// Inverse of [`ParameterBox::to_standard`].
    #[inline]
    pub fn from_standard(&self, j: usize, xi: T) -> T {
        let half = lit::<T>(0.5);
        (self.lower[j] + self.upper[j]) * half + (self.upper[j] - self.lower[j]) * half * xi
    }
}

/// Binomial count `(q + d)! / (q! d!)` of polynomials in `q` variables with
/// total degree at most `d`.
pub fn basis_dimension(q: usize, d: usize) -> Result<usize> {
    if q == 0 {
        return Err(Error::InvalidArgument("basis needs q >= 1".into()));
    }
    // C(q+d, d) built incrementally; every partial product is itself a binomial
    // coefficient, so the division is exact.
    let mut count: u128 = 1;
    for i in 1..=d as u128 {
        count = count.checked_mul(q as u128 + i).ok_or(Error::BasisOverflow { q, d })? / i;
    }
    usize::try_from(count).map_err(|_| Error::BasisOverflow { q, d })
}

/// Total-degree multi-index set in graded lexicographic order.
///
/// Indices are sorted by total degree; within one degree, tuples are sorted in
/// descending lexicographic order, so `(1,0) < (0,1)` in the enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    q: usize,
    d: usize,
    indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn total_degree(q: usize, d: usize) -> Result<Self> {
        let count = basis_dimension(q, d)?;
        let mut indices = Vec::with_capacity(count);
        let mut current = vec![0usize; q];
        for degree in 0..=d {
            push_degree(&mut indices, &mut current, 0, degree);
        }
        debug_assert_eq!(indices.len(), count);
        Ok(MultiIndexSet { q, d, indices })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn degree(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.indices[i]
    }

    /// Position of a multi-index in the enumeration.
    pub fn position(&self, alpha: &[usize]) -> Option<usize> {
        self.indices.iter().position(|a| a.as_slice() == alpha)
    }
}

fn push_degree(out: &mut Vec<Vec<usize>>, current: &mut [usize], pos: usize, remaining: usize) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.to_vec());
        current[pos] = 0;
        return;
    }
    for k in (0..=remaining).rev() {
        current[pos] = k;
        push_degree(out, current, pos + 1, remaining - k);
    }
    current[pos] = 0;
}

/// Values `sqrt(2k+1) P_k(x)` for `k = 0..=degree`, by the three-term recurrence.
pub fn legendre_orthonormal<T: Real>(degree: usize, x: T) -> Vec<T> {
    let mut p = Vec::with_capacity(degree + 1);
    p.push(T::one());
    if degree >= 1 {
        p.push(x);
    }
    for k in 1..degree {
        let kf = from_usize::<T>(k);
        let next = ((lit::<T>(2.0) * kf + T::one()) * x * p[k] - kf * p[k - 1]) / (kf + T::one());
        p.push(next);
    }
    for (k, v) in p.iter_mut().enumerate() {
        *v *= (lit::<T>(2.0) * from_usize::<T>(k) + T::one()).sqrt();
    }
    p
}

/// Orthonormal polynomial basis `Phi_1, ..., Phi_m` over a parameter box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec<T> {
    pub(crate) parameter_box: ParameterBox<T>,
    pub(crate) index_set: MultiIndexSet,
}

impl<T: Real> BasisSpec<T> {
    pub fn total_degree(parameter_box: ParameterBox<T>, d: usize) -> Result<Self> {
        let index_set = MultiIndexSet::total_degree(parameter_box.dim(), d)?;
        Ok(BasisSpec {
            parameter_box,
            index_set,
        })
    }

    pub fn parameter_box(&self) -> &ParameterBox<T> {
        &self.parameter_box
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    /// Number of basis functions `m`.
    pub fn len(&self) -> usize {
        self.index_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_set.is_empty()
    }

    pub fn q(&self) -> usize {
        self.index_set.q()
    }

    pub fn degree(&self) -> usize {
        self.index_set.degree()
    }

    /// The vector `s(p) = (Phi_i(p))_i`; rejects points outside the box.
    pub fn evaluate(&self, p: &[T]) -> Result<DVector<T>> {
        self.parameter_box.check(p)?;
        Ok(self.evaluate_unchecked(p))
    }

    pub(crate) fn evaluate_unchecked(&self, p: &[T]) -> DVector<T> {
        let d = self.degree();
        let univariate: Vec<Vec<T>> = p
            .iter()
            .enumerate()
            .map(|(j, &v)| legendre_orthonormal(d, self.parameter_box.to_standard(j, v)))
            .collect();
        DVector::from_iterator(
            self.len(),
            self.index_set.indices().iter().map(|alpha| {
                alpha.iter().enumerate().fold(
                    T::one(),
                    |acc, (j, &k)| if k == 0 { acc } else { acc * univariate[j][k] },
                )
            }),
        )
    }

    /// Matrix with row `l` equal to `s(p_l)^T` for every node of `rule`.
    pub fn evaluate_at_nodes(&self, rule: &QuadratureRule<T>) -> Result<DMatrix<T>> {
        if rule.dim() != self.q() {
            return Err(Error::Dimension(format!(
                "rule has {} coordinates, basis has {}",
                rule.dim(),
                self.q()
            )));
        }
        let m = self.len();
        let mut out = DMatrix::zeros(rule.len(), m);
        for (l, node) in rule.nodes().iter().enumerate() {
            let s = self.evaluate(node).map_err(|e| Error::at_node(l, e))?;
            out.row_mut(l).copy_from(&s.transpose());
        }
        Ok(out)
    }
}

/// `sum_l gamma_l s(p_l) s(p_l)^T`, the quadrature Gram matrix of the basis.
pub fn gram_matrix<T: Real>(spec: &BasisSpec<T>, rule: &QuadratureRule<T>) -> Result<DMatrix<T>> {
    let phi = spec.evaluate_at_nodes(rule)?;
    let mut weighted = phi.clone();
    for (l, &g) in rule.weights().iter().enumerate() {
        weighted.row_mut(l).scale_mut(g);
    }
    Ok(phi.transpose() * weighted)
}
