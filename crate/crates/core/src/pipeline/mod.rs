//! End-to-end runs: assemble, snapshot, reduce, sweep `r`, write artifacts.

mod config;
pub mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::*;

use crate::analysis::{l2_error, statistics, theorem_bound, BoundReport, ErrorKind, ErrorReport, Statistics};
use crate::collocation::{assemble_collocation, CollocationSystem, TrajectoryCache};
use crate::error::{Error, Result};
use crate::fom::{select_output_rows, FullOrderModel};
use crate::galerkin::{GalerkinOptions, GalerkinSystem};
use crate::lowdim::{
    best_approximation, mor_representation, orthonormalize_basis, output_representation, Representation,
};
use crate::models::ParametricSystem;
use crate::mor::{pod, projection_basis, reduce, PodResult};
use crate::pcbasis::BasisSpec;
use crate::timeint::{integrate, uniform_grid, ConsistencyOptions, IntegrationStats, Trajectory};

pub enum Fom {
    Galerkin(GalerkinSystem<f64>),
    Collocation(CollocationSystem<f64>),
}

impl Fom {
    pub fn as_dyn(&self) -> &dyn FullOrderModel<f64> {
        match self {
            Fom::Galerkin(s) => s,
            Fom::Collocation(s) => s,
        }
    }
}

/// Everything up to and including the full-order evaluation run; reduced
/// models for individual `r` are built from it by [`Study::sweep_r`].
pub struct Study {
    pub config: RunConfig,
    pub model: ParametricSystem<f64>,
    pub basis: BasisSpec<f64>,
    pub fom: Fom,
    /// Number of quadrature nodes for assembly (Galerkin) or collocation.
    pub rule_nodes: usize,
    pub nonlinear_nodes: Option<usize>,
    pub snapshot_times: Vec<f64>,
    pub snapshots: DMatrix<f64>,
    /// Accepted steps of the snapshot run, summed over nodes for node-wise solves.
    pub snapshot_steps: usize,
    pub pod: PodResult<f64>,
    pub eval_times: Vec<f64>,
    pub eval_stats: IntegrationStats,
    /// Full-order output representation, one per output.
    pub fom_outputs: Vec<Representation<f64>>,
}

/// Per-output results for one reduced dimension.
#[derive(Debug, Clone)]
pub struct OutputResult {
    pub output: String,
    pub mor: ErrorReport<f64>,
    pub best: ErrorReport<f64>,
    pub mor_stats: Statistics<f64>,
    pub best_stats: Statistics<f64>,
    pub bound: Option<BoundReport>,
    /// Evaluation times inside the snapshot interval where the best
    /// approximation error exceeds the bound estimate.
    pub bound_flags: usize,
    /// Rank after orthonormalization when the reduced output matrix was
    /// rank deficient.
    pub orthonormalized: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RomResult {
    pub r: usize,
    pub steps: usize,
    pub outputs: Vec<OutputResult>,
}

impl Study {
    pub fn prepare(config: &RunConfig) -> Result<Self> {
        Self::prepare_with(config, None, &mut |_| {})
    }

    /// `stage` is called with the name of each stage before it starts.
    pub fn prepare_with(
        config: &RunConfig,
        cache: Option<&TrajectoryCache>,
        stage: &mut dyn FnMut(&'static str),
    ) -> Result<Self> {
        stage("assembly");
        config.validate()?;
        let model = config.build_model()?;
        let bx = config.parameter_box(&model)?;
        let basis = config.basis(bx.clone())?;
        let rule = config.quadrature.rule.build(&bx)?;
        let consistency = ConsistencyOptions::default();
        let (fom, nonlinear_nodes) = match config.method {
            MethodKind::Galerkin => {
                let nl_rule = match &config.quadrature.nonlinear {
                    Some(spec) => spec.build(&bx)?,
                    None => rule.clone(),
                };
                let sys = GalerkinSystem::new(&model, &basis, &rule, &nl_rule, &GalerkinOptions::default())?;
                (Fom::Galerkin(sys), Some(nl_rule.len()))
            }
            MethodKind::Collocation => (
                Fom::Collocation(assemble_collocation(&model, &basis, &rule, &consistency)?),
                None,
            ),
        };

        stage("snapshots");
        let (t0, t_end) = model.horizon;
        let fom_dyn = fom.as_dyn();
        let snap_cfg = &config.integrator.snapshot;
        let (snapshot_times, snapshots, snapshot_steps) = match (config.integrator.snapshots, &fom) {
            (SnapshotSource::Grid, Fom::Collocation(sys)) => {
                let times = uniform_grid(t0, t_end, config.integrator.snapshot_points);
                let sol = sys.solve_nodes((t0, t_end), &times, snap_cfg, cache)?;
                let steps = sol.stats.iter().map(|s| s.accepted).sum();
                (times, sol.trajectory.snapshot_matrix(), steps)
            }
            (source, _) => {
                let traj = integrate(fom_dyn, (t0, t_end), fom_dyn.initial_state(), snap_cfg)?;
                let steps = traj.stats.accepted;
                match source {
                    SnapshotSource::Steps => (traj.times().to_vec(), traj.snapshot_matrix(), steps),
                    SnapshotSource::Grid => {
                        let times = uniform_grid(t0, t_end, config.integrator.snapshot_points);
                        let snaps = traj.interpolate(&times)?;
                        (times, snaps, steps)
                    }
                }
            }
        };

        stage("pod");
        let pod = pod(&snapshots)?;

        stage("fom_evaluation");
        let eval_end = t0 + config.mor.reuse_multiplier * (t_end - t0);
        let eval_times = uniform_grid(t0, eval_end, config.integrator.grid_points);
        let traj = integrate(
            fom_dyn,
            (t0, eval_end),
            fom_dyn.initial_state(),
            &config.integrator.evaluation,
        )?;
        let fom_outputs = (0..fom_dyn.n_out())
            .map(|o| output_representation(&traj, &fom_dyn.output_rows(o), &eval_times))
            .collect::<Result<_>>()?;

        Ok(Study {
            config: config.clone(),
            model,
            basis,
            rule_nodes: rule.len(),
            nonlinear_nodes,
            fom,
            snapshot_times,
            snapshots,
            snapshot_steps,
            pod,
            eval_times,
            eval_stats: traj.stats,
            fom_outputs,
        })
    }

    pub fn output_names(&self) -> &[String] {
        &self.model.output_names
    }

    /// End of the snapshot interval.
    pub fn snapshot_end(&self) -> f64 {
        self.model.horizon.1
    }

    /// Builds and integrates the reduced model of dimension `r` and compares
    /// it with the full-order solution for every output.
    pub fn sweep_r(&self, r: usize) -> Result<RomResult> {
        let fom = self.fom.as_dyn();
        let t_r = projection_basis(&self.pod, r)?;
        let rom = reduce(fom, &t_r)?;
        let span = (self.eval_times[0], *self.eval_times.last().unwrap());
        let traj = integrate(&rom, span, rom.initial_state(), &self.config.integrator.evaluation)?;
        let outputs = (0..fom.n_out())
            .map(|o| self.compare_output(o, r, &traj, &select_output_rows(rom.c(), fom.n_out(), o)))
            .collect::<Result<_>>()?;
        Ok(RomResult {
            r,
            steps: traj.stats.accepted,
            outputs,
        })
    }

    fn compare_output(
        &self,
        o: usize,
        r: usize,
        rom_traj: &Trajectory<f64>,
        c_bar: &DMatrix<f64>,
    ) -> Result<OutputResult> {
        let fom_rep = &self.fom_outputs[o];
        let mor_rep = mor_representation(rom_traj, c_bar, &self.eval_times)?;
        let (best_rep, orthonormalized) = match best_approximation(fom_rep, c_bar) {
            Ok(rep) => (rep, None),
            Err(Error::RankDeficient { .. }) => {
                let (q, rank) = orthonormalize_basis(c_bar);
                (best_approximation(fom_rep, &q)?, Some(rank))
            }
            Err(e) => return Err(e),
        };
        let mor = l2_error(fom_rep, &mor_rep, Some(r), ErrorKind::Mor)?;
        let best = l2_error(fom_rep, &best_rep, Some(r), ErrorKind::BestApprox)?;
        let bound = if self.snapshots.ncols() > r {
            let c_hat = self.fom.as_dyn().output_rows(o);
            Some(theorem_bound(
                &self.pod,
                &c_hat,
                &self.snapshots,
                &self.snapshot_times,
                r,
            )?)
        } else {
            None
        };
        let t_end = self.snapshot_end();
        let bound_flags = bound.as_ref().map_or(0, |b| {
            best.times
                .iter()
                .zip(&best.l2_errors)
                .filter(|(&t, &e)| t <= t_end && e > b.bound_value)
                .count()
        });
        Ok(OutputResult {
            output: self.output_names()[o].clone(),
            mor_stats: statistics(&mor_rep),
            best_stats: statistics(&best_rep),
            mor,
            best,
            bound,
            bound_flags,
            orthonormalized,
        })
    }

    /// Deterministic description of the assembled system and the snapshot run.
    pub fn summary(&self) -> serde_json::Value {
        let fom = self.fom.as_dyn();
        serde_json::json!({
            "name": self.config.name,
            "model": self.model.name,
            "method": self.config.method,
            "parameters": self.basis.q(),
            "degree": self.basis.degree(),
            "basis_len": self.basis.len(),
            "state_dim": self.model.n(),
            "outputs": self.output_names(),
            "rule_nodes": self.rule_nodes,
            "nonlinear_nodes": self.nonlinear_nodes,
            "fom_dim": fom.dim(),
            "is_dae": fom.is_dae(),
            "horizon": [self.model.horizon.0, self.model.horizon.1],
            "evaluation_horizon": [self.eval_times[0], self.eval_times.last()],
            "snapshot_count": self.snapshots.ncols(),
            "snapshot_steps": self.snapshot_steps,
            "evaluation_steps": self.eval_stats.accepted,
            "pod_rank": self.pod.numerical_rank(),
        })
    }
}

/// Errors of the reduced model of dimension `r` over a horizon stretched by
/// `multiplier`, one report per output.
pub fn reuse_rom(config: &RunConfig, r: usize, multiplier: f64) -> Result<Vec<ErrorReport<f64>>> {
    let mut cfg = config.clone();
    cfg.mor.reuse_multiplier = multiplier;
    cfg.mor.r = vec![r];
    let study = Study::prepare(&cfg)?;
    Ok(study.sweep_r(r)?.outputs.into_iter().map(|o| o.mor).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    pub message: String,
}

/// Result of a completed run. Failed reduced dimensions are listed in
/// `failures`; a failure in an earlier stage aborts the run instead.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub failures: Vec<Failure>,
    pub warnings: Vec<String>,
    pub outputs_hash: String,
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct PipelineError {
    pub stage: String,
    pub dir: Option<PathBuf>,
    #[source]
    pub source: Error,
}

pub fn run_pipeline(config: &RunConfig) -> std::result::Result<RunOutcome, PipelineError> {
    run_pipeline_with(config, &mut |_| {})
}

/// `progress` receives one line per stage and per reduced dimension.
pub fn run_pipeline_with(
    config: &RunConfig,
    progress: &mut dyn FnMut(&str),
) -> std::result::Result<RunOutcome, PipelineError> {
    let fail = |stage: &str, dir: Option<&Path>, source: Error| PipelineError {
        stage: stage.into(),
        dir: dir.map(Path::to_path_buf),
        source,
    };
    config.validate().map_err(|e| fail("config", None, e))?;
    let dir = config.run_dir();
    fs::create_dir_all(&dir).map_err(|e| fail("setup", Some(&dir), e.into()))?;
    let hash = config.hash().map_err(|e| fail("config", Some(&dir), e))?;
    let mut manifest = Manifest::new(config, hash);
    let mut run = Run {
        dir: &dir,
        manifest: &mut manifest,
        progress,
    };
    let result = run.execute(config);
    if let Err((stage, e)) = &result {
        manifest.failures.push(Failure {
            stage: stage.clone(),
            r: None,
            message: e.to_string(),
        });
    }
    let outputs_hash = manifest.finish(&dir);
    let write = manifest.write(&dir);
    match result {
        Err((stage, e)) => Err(fail(&stage, Some(&dir), e)),
        Ok(()) => {
            write.map_err(|e| fail("manifest", Some(&dir), e))?;
            Ok(RunOutcome {
                dir,
                failures: manifest.failures,
                warnings: manifest.warnings,
                outputs_hash,
            })
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    name: String,
    config_hash: String,
    versions: BTreeMap<&'static str, &'static str>,
    /// SHA-256 of every written file, keyed by relative path.
    files: BTreeMap<String, String>,
    /// Hash over `files`, covering all numeric outputs.
    outputs_hash: String,
    failures: Vec<Failure>,
    warnings: Vec<String>,
    /// Wall-clock seconds per stage; not part of `outputs_hash`.
    timings: BTreeMap<String, f64>,
}

impl Manifest {
    fn new(config: &RunConfig, config_hash: String) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("stochmor", env!("CARGO_PKG_VERSION"));
        Manifest {
            name: config.name.clone(),
            config_hash,
            versions,
            files: BTreeMap::new(),
            outputs_hash: String::new(),
            failures: Vec::new(),
            warnings: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    fn finish(&mut self, dir: &Path) -> String {
        let mut files = Vec::new();
        collect_files(dir, dir, &mut files);
        files.sort();
        let mut all = Sha256::new();
        for rel in files {
            if rel == MANIFEST {
                continue;
            }
            if let Ok(bytes) = fs::read(dir.join(&rel)) {
                let h = hex(&Sha256::digest(&bytes));
                all.update(rel.as_bytes());
                all.update(h.as_bytes());
                self.files.insert(rel, h);
            }
        }
        self.outputs_hash = hex(&all.finalize());
        self.outputs_hash.clone()
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }
}

const MANIFEST: &str = "manifest.json";

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) {
    let Ok(entries) = fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
}

struct Run<'a> {
    dir: &'a Path,
    manifest: &'a mut Manifest,
    progress: &'a mut dyn FnMut(&str),
}

type StageResult<T> = std::result::Result<T, (String, Error)>;

impl Run<'_> {
    fn execute(&mut self, config: &RunConfig) -> StageResult<()> {
        let at = |stage: &str| {
            let stage = stage.to_string();
            move |e: Error| (stage, e)
        };
        fs::write(self.dir.join("config.toml"), config.to_toml().map_err(at("config"))?)
            .map_err(|e| ("setup".to_string(), e.into()))?;
        let cache = if config.outputs.node_cache {
            Some(TrajectoryCache::new(self.dir.join("node_cache")).map_err(at("setup"))?)
        } else {
            None
        };

        let mut current = String::from("assembly");
        let mut started = Instant::now();
        let study = {
            let timings = &mut self.manifest.timings;
            let progress = &mut *self.progress;
            let mut on_stage = |name: &'static str| {
                timings.insert(current.clone(), started.elapsed().as_secs_f64());
                current = name.to_string();
                started = Instant::now();
                progress(name);
            };
            Study::prepare_with(config, cache.as_ref(), &mut on_stage)
        };
        self.manifest
            .timings
            .insert(current.clone(), started.elapsed().as_secs_f64());
        let study = study.map_err(|e| (current.clone(), e))?;
        if cache.is_some() {
            // cached trajectories are a convenience, not an output
            let _ = fs::remove_dir_all(self.dir.join("node_cache"));
        }

        self.write_study(&study).map_err(at("write"))?;

        let sweep_start = Instant::now();
        let mut sweep = Vec::new();
        for &r in &config.mor.r {
            (self.progress)(&format!("r = {r}"));
            match study.sweep_r(r) {
                Ok(res) => {
                    for o in &res.outputs {
                        if o.bound_flags > 0 {
                            self.manifest.warnings.push(format!(
                                "r={r} output {}: best approximation above the bound estimate at {} times",
                                o.output, o.bound_flags
                            ));
                        }
                        if let Some(rank) = o.orthonormalized {
                            self.manifest.warnings.push(format!(
                                "r={r} output {}: reduced output matrix orthonormalized to rank {rank}",
                                o.output
                            ));
                        }
                    }
                    sweep.push((r, Ok(res)));
                }
                Err(e) => {
                    self.manifest.failures.push(Failure {
                        stage: "rom".into(),
                        r: Some(r),
                        message: e.to_string(),
                    });
                    sweep.push((r, Err(e)));
                }
            }
        }
        self.manifest
            .timings
            .insert("sweep".into(), sweep_start.elapsed().as_secs_f64());
        self.write_sweep(&study, &sweep).map_err(at("write"))?;

        if config.outputs.plots {
            (self.progress)("plots");
            if let Err(e) = plot::render_run(self.dir) {
                self.manifest.warnings.push(format!("plotting failed: {e}"));
            }
        }
        Ok(())
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(fs::File::create(path)?))
    }

    fn write_study(&self, study: &Study) -> Result<()> {
        let summary = serde_json::to_string_pretty(&study.summary()).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(self.dir.join("summary.json"), summary)?;
        study.pod.write_csv(self.create("singular_values.csv")?)?;
        let mut w = self.create("snapshot_times.csv")?;
        writeln!(w, "t")?;
        for t in &study.snapshot_times {
            writeln!(w, "{t:e}")?;
        }
        w.flush()?;
        if study.config.outputs.snapshots {
            let states = study.snapshots.column_iter().map(|c| c.into_owned()).collect();
            let traj = Trajectory::new(study.snapshot_times.clone(), states, None)?;
            traj.write_binary(self.create("snapshots.bin")?)?;
        }
        if study.config.outputs.triplets {
            if let Fom::Galerkin(sys) = &study.fom {
                sys.write_triplets(self.create("galerkin_matrices.txt")?)?;
            }
        }
        for (o, rep) in study.fom_outputs.iter().enumerate() {
            let name = file_label(&study.output_names()[o]);
            statistics(rep).write_csv(self.create(&format!("statistics_fom_{name}.csv"))?)?;
            rep.write_csv(self.create(&format!("coefficients_fom_{name}.csv"))?)?;
        }
        Ok(())
    }

    fn write_sweep(&self, study: &Study, sweep: &[(usize, Result<RomResult>)]) -> Result<()> {
        let t_end = study.snapshot_end();
        let detail = &study.config.outputs.detail_r;
        let mut table = self.create("sweep.csv")?;
        writeln!(
            table,
            "r,output,status,rom_steps,max_mor_error,max_best_error,max_mor_error_in_sample,max_best_error_in_sample,bound_estimate,bound_flags"
        )?;
        let mut bounds = self.create("bounds.csv")?;
        writeln!(bounds, "output,{}", BoundReport::csv_header())?;
        for (r, res) in sweep {
            let res = match res {
                Ok(res) => res,
                Err(_) => {
                    for name in study.output_names() {
                        writeln!(table, "{r},{name},failed,,,,,,,")?;
                    }
                    continue;
                }
            };
            for o in &res.outputs {
                let in_sample = |e: &ErrorReport<f64>| {
                    e.times
                        .iter()
                        .zip(&e.l2_errors)
                        .filter(|(&t, _)| t <= t_end)
                        .fold(0.0f64, |a, (_, &v)| a.max(v))
                };
                let bound = o
                    .bound
                    .as_ref()
                    .map_or(String::new(), |b| format!("{:e}", b.bound_value));
                writeln!(
                    table,
                    "{r},{},ok,{},{:e},{:e},{:e},{:e},{bound},{}",
                    o.output,
                    res.steps,
                    o.mor.max_error,
                    o.best.max_error,
                    in_sample(&o.mor),
                    in_sample(&o.best),
                    o.bound_flags
                )?;
                if let Some(b) = &o.bound {
                    writeln!(bounds, "{},{}", o.output, b.csv_row())?;
                }
                if detail.is_empty() || detail.contains(r) {
                    self.write_detail(study, *r, o)?;
                }
            }
        }
        table.flush()?;
        bounds.flush()?;
        Ok(())
    }

    fn write_detail(&self, study: &Study, r: usize, o: &OutputResult) -> Result<()> {
        let name = file_label(&o.output);
        o.mor.write_csv(self.create(&format!("errors_r{r}_{name}_mor.csv"))?)?;
        o.best
            .write_csv(self.create(&format!("errors_r{r}_{name}_best_approx.csv"))?)?;
        let idx = study.output_names().iter().position(|n| *n == o.output).unwrap_or(0);
        let fom = statistics(&study.fom_outputs[idx]);
        let mut w = self.create(&format!("statistics_r{r}_{name}.csv"))?;
        writeln!(w, "t,fom_mean,fom_std,mor_mean,mor_std,best_mean,best_std")?;
        for j in 0..fom.times.len() {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                fom.times[j],
                fom.mean[j],
                fom.std[j],
                o.mor_stats.mean[j],
                o.mor_stats.std[j],
                o.best_stats.mean[j],
                o.best_stats.std[j]
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Output names restricted to characters that are safe in file names.
fn file_label(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
