//! Low-dimensional representations of a scalar quantity of interest.
//!
//! A representation stores coefficient trajectories on a time grid, either
//! over the polynomial basis `Phi` directly or over new basis functions
//! `Psi_j = sum_i cbar_ij Phi_i` given by the columns of `cbar`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::pcbasis::BasisSpec;
use crate::scalar::{lit, to_f64, Real};
use crate::timeint::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisTag {
    Phi,
    Psi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representation<T: Real> {
    times: Vec<T>,
    /// One column per time point.
    coeffs: DMatrix<T>,
    /// `m x r` map from Psi- to Phi-coordinates; absent for Phi representations.
    c_bar: Option<DMatrix<T>>,
}

fn check_grid<T: Real>(times: &[T], cols: usize) -> Result<()> {
    if times.is_empty() || times.len() != cols {
        return Err(Error::Dimension(format!(
            "{} times but {} coefficient columns",
            times.len(),
            cols
        )));
    }
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("time grid must increase strictly".into()));
    }
    Ok(())
}

impl<T: Real> Representation<T> {
    pub fn phi(times: Vec<T>, coeffs: DMatrix<T>) -> Result<Self> {
        check_grid(&times, coeffs.ncols())?;
        Ok(Representation {
            times,
            coeffs,
            c_bar: None,
        })
    }

    pub fn psi(times: Vec<T>, coeffs: DMatrix<T>, c_bar: DMatrix<T>) -> Result<Self> {
        check_grid(&times, coeffs.ncols())?;
        if c_bar.ncols() != coeffs.nrows() {
            return Err(Error::Dimension(format!(
                "cbar has {} columns, representation {} coefficients",
                c_bar.ncols(),
                coeffs.nrows()
            )));
        }
        Ok(Representation {
            times,
            coeffs,
            c_bar: Some(c_bar),
        })
    }

    pub fn basis_tag(&self) -> BasisTag {
        if self.c_bar.is_some() {
            BasisTag::Psi
        } else {
            BasisTag::Phi
        }
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn coeffs(&self) -> &DMatrix<T> {
        &self.coeffs
    }

    pub fn c_bar(&self) -> Option<&DMatrix<T>> {
        self.c_bar.as_ref()
    }

    /// Number of Phi basis functions `m`.
    pub fn basis_len(&self) -> usize {
        self.c_bar.as_ref().map_or(self.coeffs.nrows(), |c| c.nrows())
    }

    /// Coefficients over Phi, one column per time.
    pub fn phi_coordinates(&self) -> DMatrix<T> {
        match &self.c_bar {
            Some(c) => c * &self.coeffs,
            None => self.coeffs.clone(),
        }
    }

    /// Phi-coordinates at `t`, linear in time between grid points.
    pub fn phi_at(&self, t: T) -> Result<DVector<T>> {
        let coeffs = self.coeffs_at(t)?;
        Ok(match &self.c_bar {
            Some(c) => c * coeffs,
            None => coeffs,
        })
    }

    fn coeffs_at(&self, t: T) -> Result<DVector<T>> {
        let (start, end) = (self.times[0], *self.times.last().unwrap());
        if t < start || t > end {
            return Err(Error::Extrapolation {
                t: to_f64(t),
                start: to_f64(start),
                end: to_f64(end),
            });
        }
        let j = self.times.partition_point(|&s| s <= t);
        if j == 0 || self.times[j - 1] == t {
            return Ok(self.coeffs.column(j.saturating_sub(1)).into_owned());
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let s = (t - t0) / (t1 - t0);
        Ok(self.coeffs.column(j - 1) * (T::one() - s) + self.coeffs.column(j) * s)
    }

    /// CSV with a time column and one column per coefficient.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let prefix = match self.basis_tag() {
            BasisTag::Phi => "w",
            BasisTag::Psi => "wbar",
        };
        let header: Vec<String> = (1..=self.coeffs.nrows()).map(|i| format!("{prefix}{i}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for (j, t) in self.times.iter().enumerate() {
            let row: Vec<String> = self
                .coeffs
                .column(j)
                .iter()
                .map(|v| format!("{:e}", to_f64(*v)))
                .collect();
            writeln!(out, "{:e},{}", to_f64(*t), row.join(","))?;
        }
        Ok(())
    }

    /// Companion file: the `m x r` matrix `cbar`, one row per Phi.
    pub fn write_c_bar_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let Some(c) = &self.c_bar else {
            return Err(Error::InvalidArgument("representation has no cbar".into()));
        };
        let header: Vec<String> = (1..=c.ncols()).map(|j| format!("psi{j}")).collect();
        writeln!(out, "phi,{}", header.join(","))?;
        for i in 0..c.nrows() {
            let row: Vec<String> = c.row(i).iter().map(|v| format!("{:e}", to_f64(*v))).collect();
            writeln!(out, "{},{}", i + 1, row.join(","))?;
        }
        Ok(())
    }
}

/// Phi representation of the output `c x(t)` of a trajectory, sampled at `times`.
pub fn output_representation<T: Real>(traj: &Trajectory<T>, c: &DMatrix<T>, times: &[T]) -> Result<Representation<T>> {
    Representation::phi(times.to_vec(), c * traj.interpolate(times)?)
}

/// The reduced state itself is the coefficient vector over Psi.
pub fn mor_representation<T: Real>(
    rom_traj: &Trajectory<T>,
    c_bar: &DMatrix<T>,
    times: &[T],
) -> Result<Representation<T>> {
    if rom_traj.dim() != c_bar.ncols() {
        return Err(Error::Dimension(format!(
            "reduced state has dimension {}, cbar {} columns",
            rom_traj.dim(),
            c_bar.ncols()
        )));
    }
    Representation::psi(times.to_vec(), rom_traj.interpolate(times)?, c_bar.clone())
}

fn rank_cut<T: Real>(rows: usize, cols: usize, largest: T) -> T {
    largest * lit::<T>(rows.max(cols) as f64 * 1e-12)
}

/// Per-time least-squares fit `min ||w_hat(t) - cbar w(t)||_2`, using one QR
/// factorization of `cbar` for every time point.
pub fn best_approximation<T: Real>(fom: &Representation<T>, c_bar: &DMatrix<T>) -> Result<Representation<T>> {
    let w_hat = fom.phi_coordinates();
    let (m, r) = c_bar.shape();
    if w_hat.nrows() != m {
        return Err(Error::Dimension(format!(
            "outputs have {} coefficients, cbar {} rows",
            w_hat.nrows(),
            m
        )));
    }
    if r == 0 || r > m {
        return Err(Error::RankDeficient {
            rank: r.min(m),
            cols: r,
        });
    }
    let qr = c_bar.clone().qr();
    let rmat = qr.r();
    let diag: Vec<T> = (0..r).map(|i| rmat[(i, i)].abs()).collect();
    let largest = diag.iter().fold(T::zero(), |a, &b| a.max(b));
    let cut = rank_cut(m, r, largest);
    let rank = diag.iter().filter(|&&d| d > cut).count();
    if rank < r || largest == T::zero() {
        return Err(Error::RankDeficient { rank, cols: r });
    }
    let rhs = qr.q().transpose() * &w_hat;
    let w = rmat
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Singular("triangular factor of cbar".into()))?;
    Representation::psi(fom.times().to_vec(), w, c_bar.clone())
}

/// Orthonormal columns spanning the same space as `cbar`, with numerically
/// dependent directions removed. Returns the new matrix and its rank.
pub fn orthonormalize_basis<T: Real>(c_bar: &DMatrix<T>) -> (DMatrix<T>, usize) {
    let (m, r) = c_bar.shape();
    if m == 0 || r == 0 {
        return (DMatrix::zeros(m, 0), 0);
    }
    let svd = SVD::new(c_bar.clone(), true, false);
    let u = svd.u.unwrap();
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    let largest = s[order[0]];
    let cut = rank_cut(m, r, largest);
    let keep: Vec<usize> = order.into_iter().filter(|&i| s[i] > cut).collect();
    let mut out = DMatrix::zeros(m, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        out.set_column(j, &u.column(i));
    }
    (out, keep.len())
}

/// Pointwise value `y(t, p)`.
pub fn evaluate_qoi<T: Real>(rep: &Representation<T>, spec: &BasisSpec<T>, t: T, p: &[T]) -> Result<T> {
    if rep.basis_len() != spec.len() {
        return Err(Error::Dimension(format!(
            "representation over {} basis functions, basis has {}",
            rep.basis_len(),
            spec.len()
        )));
    }
    let s = spec.evaluate(p)?;
    Ok(s.dot(&rep.phi_at(t)?))
}
