//! Stochastic collocation written as one weakly coupled system.
//!
//! Block `l` of the state is the original system at node `p_l`; the blocks
//! share only the input and the output map.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fom::FullOrderModel;
use crate::linalg::SystemMatrix;
use crate::models::{NodeSystem, ParametricSystem, Signal};
use crate::pcbasis::BasisSpec;
use crate::quadrature::QuadratureRule;
use crate::scalar::{lit, to_f64, Real};
use crate::timeint::{integrate, ConsistencyOptions, ImplicitSystem, IntegrationStats, IntegratorConfig, Trajectory};

#[derive(Debug, Clone)]
pub struct CollocationSystem<T: Real> {
    name: String,
    n: usize,
    m: usize,
    n_out: usize,
    is_dae: bool,
    rule: QuadratureRule<T>,
    nodes: Vec<NodeSystem<T>>,
    mass: SystemMatrix<T>,
    b_hat: DMatrix<T>,
    c_hat: DMatrix<T>,
    x0: DVector<T>,
    input: Vec<Signal>,
}

/// Builds the coupled collocation system. Initial values are made
/// consistent node by node for DAEs.
pub fn assemble_collocation<T: Real>(
    model: &ParametricSystem<T>,
    basis: &BasisSpec<T>,
    rule: &QuadratureRule<T>,
    opts: &ConsistencyOptions,
) -> Result<CollocationSystem<T>> {
    model.validate()?;
    if model.q() != basis.q() || rule.dim() != basis.q() {
        return Err(Error::Dimension(format!(
            "model has {} parameters, basis {}, rule {}",
            model.q(),
            basis.q(),
            rule.dim()
        )));
    }
    let (n, n_in, n_out, m, k) = (model.n(), model.n_in(), model.n_out(), basis.len(), rule.len());
    let phi = basis.evaluate_at_nodes(rule)?;
    let nodes: Vec<NodeSystem<T>> = rule.nodes().iter().map(|p| model.at(p)).collect::<Result<_>>()?;
    let x0_blocks: Vec<DVector<T>> = rule
        .nodes()
        .par_iter()
        .enumerate()
        .map(|(l, p)| model.consistent_init(p, opts).map_err(|e| Error::at_node(l, e)))
        .collect::<Result<_>>()?;

    let mut x0 = DVector::zeros(k * n);
    let mut b_hat = DMatrix::zeros(k * n, n_in);
    let mut c_hat = DMatrix::zeros(m * n_out, k * n);
    for (l, p) in rule.nodes().iter().enumerate() {
        x0.rows_mut(l * n, n).copy_from(&x0_blocks[l]);
        b_hat.view_mut((l * n, 0), (n, n_in)).copy_from(nodes[l].b());
        let c = model.c.eval(p);
        let g = rule.weights()[l];
        for i in 0..m {
            let s = g * phi[(l, i)];
            for o in 0..n_out {
                for j in 0..n {
                    c_hat[(i * n_out + o, l * n + j)] = s * c[(o, j)];
                }
            }
        }
    }
    let mass = SystemMatrix::BlockDiagonal(nodes.iter().map(|s| s.mass().to_dense()).collect());
    Ok(CollocationSystem {
        name: model.name.clone(),
        n,
        m,
        n_out,
        is_dae: model.is_dae,
        rule: rule.clone(),
        nodes,
        mass,
        b_hat,
        c_hat,
        x0,
        input: model.input.clone(),
    })
}

/// Stacked output coefficients `C x`.
pub fn collocation_output<T: Real>(sys: &CollocationSystem<T>, x: &DVector<T>) -> Result<DVector<T>> {
    if x.len() != sys.dim() {
        return Err(Error::Dimension(format!(
            "state has length {}, expected {}",
            x.len(),
            sys.dim()
        )));
    }
    Ok(&sys.c_hat * x)
}

/// States of every node on a shared time grid.
#[derive(Debug, Clone)]
pub struct CollocationSolution<T: Real> {
    pub trajectory: Trajectory<T>,
    /// Integrator counters, one entry per node for node-wise solves and a
    /// single entry for the coupled solve.
    pub stats: Vec<IntegrationStats>,
}

impl<T: Real> CollocationSystem<T> {
    pub fn dim(&self) -> usize {
        self.n * self.nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn rule(&self) -> &QuadratureRule<T> {
        &self.rule
    }

    pub fn node(&self, l: usize) -> &NodeSystem<T> {
        &self.nodes[l]
    }

    pub fn block<'a>(&self, x: &'a DVector<T>, l: usize) -> nalgebra::DVectorView<'a, T> {
        x.rows(l * self.n, self.n)
    }

    /// Solves every node independently (in parallel) and interpolates onto `times`.
    pub fn solve_nodes(
        &self,
        t_span: (T, T),
        times: &[T],
        config: &IntegratorConfig,
        cache: Option<&TrajectoryCache>,
    ) -> Result<CollocationSolution<T>> {
        let n = self.n;
        let per_node: Vec<(DMatrix<T>, IntegrationStats)> = (0..self.nodes.len())
            .into_par_iter()
            .map(|l| {
                let x0 = self.x0.rows(l * n, n).into_owned();
                let traj = match cache {
                    Some(c) => c.get_or_compute(&self.name, &self.nodes[l], t_span, &x0, config)?,
                    None => integrate(&self.nodes[l], t_span, &x0, config)?,
                };
                Ok((traj.interpolate(times)?, traj.stats))
            })
            .enumerate()
            .map(|(l, r): (usize, Result<_>)| r.map_err(|e| Error::at_node(l, e)))
            .collect::<Result<_>>()?;
        let states = (0..times.len())
            .map(|j| {
                let mut x = DVector::zeros(self.dim());
                for (l, (vals, _)) in per_node.iter().enumerate() {
                    x.rows_mut(l * n, n).copy_from(&vals.column(j));
                }
                x
            })
            .collect();
        Ok(CollocationSolution {
            trajectory: Trajectory::new(times.to_vec(), states, None)?,
            stats: per_node.into_iter().map(|(_, s)| s).collect(),
        })
    }

    /// Integrates the full coupled system with one shared step sequence.
    pub fn solve_coupled(
        &self,
        t_span: (T, T),
        times: &[T],
        config: &IntegratorConfig,
    ) -> Result<CollocationSolution<T>> {
        let traj = integrate(self, t_span, &self.x0, config)?;
        let stats = vec![traj.stats.clone()];
        Ok(CollocationSolution {
            trajectory: traj.resample(times)?,
            stats,
        })
    }

    fn blocks_of(&self, t_r: &DMatrix<T>, l: usize) -> DMatrix<T> {
        t_r.rows(l * self.n, self.n).into_owned()
    }
}

impl<T: Real> ImplicitSystem<T> for CollocationSystem<T> {
    fn dim(&self) -> usize {
        self.n * self.nodes.len()
    }

    fn mass(&self) -> &SystemMatrix<T> {
        &self.mass
    }

    fn rhs(&self, t: T, x: &DVector<T>) -> Result<DVector<T>> {
        let n = self.n;
        let blocks: Vec<DVector<T>> = self
            .nodes
            .par_iter()
            .enumerate()
            .map(|(l, s)| {
                s.rhs(t, &x.rows(l * n, n).into_owned())
                    .map_err(|e| Error::at_node(l, e))
            })
            .collect::<Result<_>>()?;
        let mut out = DVector::zeros(x.len());
        for (l, b) in blocks.iter().enumerate() {
            out.rows_mut(l * n, n).copy_from(b);
        }
        Ok(out)
    }

    fn jacobian(&self, t: T, x: &DVector<T>) -> Result<SystemMatrix<T>> {
        let n = self.n;
        let blocks: Vec<DMatrix<T>> = self
            .nodes
            .par_iter()
            .enumerate()
            .map(|(l, s)| {
                s.jacobian(t, &x.rows(l * n, n).into_owned())
                    .map(|j| j.to_dense())
                    .map_err(|e| Error::at_node(l, e))
            })
            .collect::<Result<_>>()?;
        Ok(SystemMatrix::BlockDiagonal(blocks))
    }
}

impl<T: Real> FullOrderModel<T> for CollocationSystem<T> {
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
        &self.c_hat
    }

    fn initial_state(&self) -> &DVector<T> {
        &self.x0
    }

    fn input(&self, t: T) -> DVector<T> {
        DVector::from_iterator(self.input.len(), self.input.iter().map(|s| s.eval(t)))
    }

    fn project_linear(&self, t_r: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        let r = t_r.ncols();
        let mut e = DMatrix::zeros(r, r);
        let mut a = DMatrix::zeros(r, r);
        for (l, s) in self.nodes.iter().enumerate() {
            let tl = self.blocks_of(t_r, l);
            let tlt = tl.transpose();
            e += &tlt * s.mass().to_dense() * &tl;
            a += &tlt * s.a() * &tl;
        }
        (e, a, t_r.transpose() * &self.b_hat)
    }

    fn nonlinear(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let n = self.n;
        let blocks: Vec<DVector<T>> = self
            .nodes
            .par_iter()
            .enumerate()
            .map(|(l, s)| {
                s.nonlinearity()
                    .eval(&x.rows(l * n, n).into_owned(), s.parameters())
                    .map_err(|e| Error::at_node(l, e))
            })
            .collect::<Result<_>>()?;
        let mut out = DVector::zeros(x.len());
        for (l, b) in blocks.iter().enumerate() {
            out.rows_mut(l * n, n).copy_from(b);
        }
        Ok(out)
    }

    fn has_nonlinearity(&self) -> bool {
        !self.nodes.first().is_none_or(|s| s.nonlinearity().is_zero())
    }

    fn project_nonlinear_jacobian(&self, x: &DVector<T>, t_r: &DMatrix<T>) -> Result<DMatrix<T>> {
        let n = self.n;
        let r = t_r.ncols();
        let parts: Vec<DMatrix<T>> = self
            .nodes
            .par_iter()
            .enumerate()
            .map(|(l, s)| {
                let j = s
                    .nonlinearity()
                    .jacobian(&x.rows(l * n, n).into_owned(), s.parameters())
                    .map_err(|e| Error::at_node(l, e))?;
                let tl = self.blocks_of(t_r, l);
                Ok(tl.transpose() * j * tl)
            })
            .collect::<Result<_>>()?;
        Ok(parts.into_iter().fold(DMatrix::zeros(r, r), |acc, p| acc + p))
    }
}

/// On-disk store of node trajectories, keyed by a hash of the model name,
/// node parameters, initial state, time span and integrator settings.
#[derive(Debug, Clone)]
pub struct TrajectoryCache {
    dir: PathBuf,
}

impl TrajectoryCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(TrajectoryCache {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key<T: Real>(
        model: &str,
        node: &NodeSystem<T>,
        t_span: (T, T),
        x0: &DVector<T>,
        config: &IntegratorConfig,
    ) -> Result<String> {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([std::mem::size_of::<T>() as u8]);
        for v in node
            .parameters()
            .iter()
            .chain(x0.iter())
            .chain([t_span.0, t_span.1].iter())
        {
            h.update(to_f64(*v).to_le_bytes());
        }
        h.update(serde_json::to_vec(config).map_err(|e| Error::Config(e.to_string()))?);
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn get_or_compute<T: Real>(
        &self,
        model: &str,
        node: &NodeSystem<T>,
        t_span: (T, T),
        x0: &DVector<T>,
        config: &IntegratorConfig,
    ) -> Result<Trajectory<T>> {
        let path = self
            .dir
            .join(format!("{}.traj", Self::key(model, node, t_span, x0, config)?));
        if let Ok(file) = fs::File::open(&path) {
            if let Ok(traj) = Trajectory::<f64>::read_binary(std::io::BufReader::new(file)) {
                return convert(&traj);
            }
        }
        let traj = integrate(node, t_span, x0, config)?;
        let tmp = path.with_extension("tmp");
        {
            let f = fs::File::create(&tmp)?;
            let mut w = std::io::BufWriter::new(f);
            traj.write_binary(&mut w)?;
            std::io::Write::flush(&mut w)?;
        }
        fs::rename(&tmp, &path)?;
        Ok(traj)
    }
}

fn convert<T: Real>(traj: &Trajectory<f64>) -> Result<Trajectory<T>> {
    let conv = |v: &DVector<f64>| v.map(lit::<T>);
    let mut out = Trajectory::new(
        traj.times().iter().map(|&t| lit(t)).collect(),
        traj.states().iter().map(conv).collect(),
        traj.derivatives().map(|d| d.iter().map(conv).collect()),
    )?;
    out.stats = traj.stats.clone();
    Ok(out)
}
