//! Probabilistic quadrature on a parameter box.
//!
//! All rules integrate against the uniform probability density of the box, so
//! the weights of a rule sum to one. Univariate Gauss-Legendre rules come from
//! the Golub-Welsch eigenvalue problem, refined by a few Newton steps on the
//! Legendre recurrence. Multivariate rules are full tensor products or Smolyak
//! sparse grids assembled from the univariate family.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pcbasis::ParameterBox;
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Default upper bound on the number of nodes of a generated rule.
pub const DEFAULT_NODE_CAP: usize = 10_000_000;

/// Univariate Gauss-Legendre rule on `[-1, 1]` for the density `1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> GaussLegendre<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p_prev = T::one();
    let mut p = x;
    if n == 0 {
        return (T::one(), T::zero());
    }
    for k in 1..n {
        let kf = from_usize::<T>(k);
        let next = ((lit::<T>(2.0) * kf + T::one()) * x * p - kf * p_prev) / (kf + T::one());
        p_prev = p;
        p = next;
    }
    let nf = from_usize::<T>(n);
    let dp = nf * (p_prev - x * p) / (T::one() - x * x);
    (p, dp)
}

/// Gauss-Legendre rule with `n` nodes in ascending order, exact for every
/// polynomial of degree `2n - 1` against the uniform density on `[-1, 1]`.
pub fn gauss_legendre_1d<T: Real>(n: usize) -> Result<GaussLegendre<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("gauss rule needs n >= 1".into()));
    }
    if n == 1 {
        return Ok(GaussLegendre {
            nodes: vec![T::zero()],
            weights: vec![T::one()],
        });
    }
    let mut jacobi = DMatrix::<T>::zeros(n, n);
    for k in 1..n {
        let kf = from_usize::<T>(k);
        let beta = kf / (lit::<T>(4.0) * kf * kf - T::one()).sqrt();
        jacobi[(k, k - 1)] = beta;
        jacobi[(k - 1, k)] = beta;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(T, T)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    let half = lit::<T>(0.5);
    for pair in pairs.iter_mut() {
        let mut x = pair.0;
        for _ in 0..3 {
            let (p, dp) = legendre_with_derivative(n, x);
            x -= p / dp;
        }
        let (_, dp) = legendre_with_derivative(n, x);
        *pair = (x, half * lit::<T>(2.0) / ((T::one() - x * x) * dp * dp));
    }

    // enforce exact symmetry about the origin
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    for i in 0..n {
        let j = n - 1 - i;
        nodes[i] = (pairs[i].0 - pairs[j].0) * half;
        weights[i] = (pairs[i].1 + pairs[j].1) * half;
    }
    if n % 2 == 1 {
        nodes[n / 2] = T::zero();
    }
    Ok(GaussLegendre { nodes, weights })
}

/// Nodes `p^(l)` in the parameter box with weights `gamma_l`.
///
/// Generated rules have weights summing to one; sparse-grid weights may be
/// negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule<T> {
    nodes: Vec<Vec<T>>,
    weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    pub fn new(nodes: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} nodes but {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        let q = nodes[0].len();
        if nodes.iter().any(|n| n.len() != q) {
            return Err(Error::Dimension("nodes of differing length".into()));
        }
        if weights.iter().chain(nodes.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "quadrature rule".into(),
            });
        }
        Ok(QuadratureRule { nodes, weights })
    }

    /// Maps a univariate rule onto a one-dimensional box.
    pub fn from_univariate(rule: &GaussLegendre<T>, parameter_box: &ParameterBox<T>) -> Self {
        assert_eq!(parameter_box.dim(), 1, "univariate rule needs a 1D box");
        QuadratureRule {
            nodes: rule
                .nodes
                .iter()
                .map(|&x| vec![parameter_box.from_standard(0, x)])
                .collect(),
            weights: rule.weights.clone(),
        }
    }

    /// Single node with unit weight.
    pub fn single(node: Vec<T>) -> Self {
        QuadratureRule {
            nodes: vec![node],
            weights: vec![T::one()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, Vec::len)
    }

    pub fn nodes(&self) -> &[Vec<T>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight_sum(&self) -> T {
        self.weights.iter().fold(T::zero(), |a, &w| a + w)
    }

    /// Copy of the rule with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        QuadratureRule {
            nodes: self.nodes.clone(),
            weights: self.weights.iter().map(|&w| w * factor).collect(),
        }
    }

    /// Writes one row per node: coordinates followed by the weight.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim())
            .map(|j| format!("p{j}"))
            .chain(std::iter::once("weight".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (node, &w) in self.nodes.iter().zip(&self.weights) {
            let row: Vec<String> = node
                .iter()
                .chain(std::iter::once(&w))
                .map(|&v| format!("{:e}", to_f64(v)))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Full tensor product of `per_axis`-point Gauss-Legendre rules.
pub fn tensor_rule<T: Real>(parameter_box: &ParameterBox<T>, per_axis: usize) -> Result<QuadratureRule<T>> {
    tensor_rule_capped(parameter_box, per_axis, DEFAULT_NODE_CAP)
}

pub fn tensor_rule_capped<T: Real>(
    parameter_box: &ParameterBox<T>,
    per_axis: usize,
    cap: usize,
) -> Result<QuadratureRule<T>> {
    let q = parameter_box.dim();
    let total = (per_axis as u128).checked_pow(q as u32).unwrap_or(u128::MAX);
    if total > cap as u128 {
        return Err(Error::TooManyNodes { nodes: total, cap });
    }
    let uni = gauss_legendre_1d::<T>(per_axis)?;
    let axes: Vec<&GaussLegendre<T>> = vec![&uni; q];
    let (std_nodes, weights) = tensor_product(&axes);
    let nodes = std_nodes
        .into_iter()
        .map(|xi| {
            xi.iter()
                .enumerate()
                .map(|(j, &x)| parameter_box.from_standard(j, x))
                .collect()
        })
        .collect();
    Ok(QuadratureRule { nodes, weights })
}

/// Standardized tensor grid; the last coordinate varies fastest.
fn tensor_product<T: Real>(axes: &[&GaussLegendre<T>]) -> (Vec<Vec<T>>, Vec<T>) {
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut counter = vec![0usize; axes.len()];
    for _ in 0..total {
        let mut node = Vec::with_capacity(axes.len());
        let mut w = T::one();
        for (axis, &c) in axes.iter().zip(&counter) {
            node.push(axis.nodes[c]);
            w *= axis.weights[c];
        }
        nodes.push(node);
        weights.push(w);
        for j in (0..axes.len()).rev() {
            counter[j] += 1;
            if counter[j] < axes[j].len() {
                break;
            }
            counter[j] = 0;
        }
    }
    (nodes, weights)
}

/// Number of univariate points used at a sparse-grid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GrowthRule {
    /// `n(l) = l`: 1, 2, 3, ... points.
    #[default]
    Linear,
    /// `n(l) = 2l - 1`: 1, 3, 5, ... points.
    Odd,
    /// `n(l) = 2^l - 1`: 1, 3, 7, 15, ... points.
    Exponential,
}

impl GrowthRule {
    pub fn points(self, level: usize) -> usize {
        match self {
            GrowthRule::Linear => level,
            GrowthRule::Odd => 2 * level - 1,
            GrowthRule::Exponential => (1usize << level) - 1,
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k as u128).fold(1u128, |acc, i| acc * (n as u128 - i) / (i + 1))
}

/// Smolyak sparse grid of Gauss-Legendre rules.
///
/// Levels start at 1 (a single midpoint node). The combination technique sums
/// tensor rules over multi-indices `i >= 1` with `q <= |i| <= q + level - 1`;
/// coinciding nodes are merged by summing their weights.
pub fn sparse_grid<T: Real>(
    parameter_box: &ParameterBox<T>,
    level: usize,
    growth: GrowthRule,
) -> Result<QuadratureRule<T>> {
    sparse_grid_capped(parameter_box, level, growth, DEFAULT_NODE_CAP)
}

pub fn sparse_grid_capped<T: Real>(
    parameter_box: &ParameterBox<T>,
    level: usize,
    growth: GrowthRule,
    cap: usize,
) -> Result<QuadratureRule<T>> {
    if level == 0 {
        return Err(Error::InvalidArgument("sparse grid level starts at 1".into()));
    }
    let q = parameter_box.dim();
    let top = q + level - 1;
    let univariate: Vec<GaussLegendre<T>> = (1..=level)
        .map(|l| gauss_legendre_1d(growth.points(l)))
        .collect::<Result<_>>()?;

    let mut indices = Vec::new();
    let mut current = vec![1usize; q];
    collect_indices(&mut indices, &mut current, 0, q, top);
    // combination coefficients vanish below |i| = top - q + 1
    indices.retain(|i| top - i.iter().sum::<usize>() < q);

    let raw: u128 = indices
        .iter()
        .map(|i| i.iter().map(|&l| univariate[l - 1].len() as u128).product::<u128>())
        .sum();
    if raw > cap as u128 {
        return Err(Error::TooManyNodes { nodes: raw, cap });
    }

    // Gauss nodes are well separated, so quantizing the standardized
    // coordinates at 1e-10 identifies exactly the shared nodes.
    let quantum = 1e10;
    let mut merged: BTreeMap<Vec<i64>, (Vec<T>, T)> = BTreeMap::new();
    for index in &indices {
        let norm: usize = index.iter().sum();
        let gap = top - norm;
        let coefficient = binomial(q - 1, gap) as f64 * if gap % 2 == 0 { 1.0 } else { -1.0 };
        let coefficient = lit::<T>(coefficient);
        let axes: Vec<&GaussLegendre<T>> = index.iter().map(|&l| &univariate[l - 1]).collect();
        let (nodes, weights) = tensor_product(&axes);
        for (xi, w) in nodes.into_iter().zip(weights) {
            let key: Vec<i64> = xi.iter().map(|&x| (to_f64(x) * quantum).round() as i64).collect();
            merged
                .entry(key)
                .and_modify(|e| e.1 += coefficient * w)
                .or_insert((xi, coefficient * w));
        }
    }
    let mut nodes = Vec::with_capacity(merged.len());
    let mut weights = Vec::with_capacity(merged.len());
    for (_, (xi, w)) in merged {
        nodes.push(
            xi.iter()
                .enumerate()
                .map(|(j, &x)| parameter_box.from_standard(j, x))
                .collect(),
        );
        weights.push(w);
    }
    Ok(QuadratureRule { nodes, weights })
}

fn collect_indices(out: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, pos: usize, q: usize, top: usize) {
    let used: usize = current[..pos].iter().sum();
    let remaining_min = q - pos - 1;
    if pos == q - 1 {
        for l in 1..=top - used {
            current[pos] = l;
            out.push(current.clone());
        }
        current[pos] = 1;
        return;
    }
    for l in 1..=(top - used - remaining_min) {
        current[pos] = l;
        collect_indices(out, current, pos + 1, q, top);
    }
    current[pos] = 1;
}

/// `sum_l gamma_l f(p^(l))`.
///
/// Node evaluations run in parallel; the weighted sum is accumulated in node
/// order so results do not depend on scheduling.
pub fn expect<T, F>(rule: &QuadratureRule<T>, f: F) -> Result<DVector<T>>
where
    T: Real,
    F: Fn(&[T]) -> Result<DVector<T>> + Sync,
{
    let values: Vec<DVector<T>> = rule
        .nodes
        .par_iter()
        .enumerate()
        .map(|(l, node)| f(node).map_err(|e| Error::at_node(l, e)))
        .collect::<Result<_>>()?;
    let mut acc = DVector::zeros(values[0].len());
    for (l, (v, &w)) in values.iter().zip(&rule.weights).enumerate() {
        if v.len() != acc.len() {
            return Err(Error::at_node(
                l,
                Error::Dimension(format!("value has length {}, expected {}", v.len(), acc.len())),
            ));
        }
        acc.axpy(w, v, T::one());
    }
    Ok(acc)
}
