//! Declarative run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{builtin, CustomModel, ParametricSystem};
use crate::pcbasis::{BasisSpec, ParameterBox};
use crate::quadrature::{sparse_grid, tensor_rule, GrowthRule, QuadratureRule};
use crate::timeint::IntegratorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub model: ModelConfig,
    pub uq: UqConfig,
    pub method: MethodKind,
    pub quadrature: QuadratureConfig,
    pub integrator: IntegratorBlock,
    pub mor: MorConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

/// Exactly one of `builtin` and `file`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Custom model file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqConfig {
    /// Total polynomial degree `d`.
    pub degree: usize,
    /// Relative half-width of the box around the nominal values (0.1 = 10%).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation: Option<f64>,
    /// Explicit box bounds; override `variation` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Galerkin,
    Collocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSpec {
    Tensor {
        per_axis: usize,
    },
    Sparse {
        level: usize,
        #[serde(default)]
        growth: GrowthRule,
    },
}

impl RuleSpec {
    pub fn build(&self, bx: &ParameterBox<f64>) -> Result<QuadratureRule<f64>> {
        match *self {
            RuleSpec::Tensor { per_axis } => tensor_rule(bx, per_axis),
            RuleSpec::Sparse { level, growth } => sparse_grid(bx, level, growth),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Assembly rule for Galerkin, node set for collocation.
    pub rule: RuleSpec,
    /// Galerkin only: rule for the nonlinear term (defaults to `rule`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinear: Option<RuleSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotSource {
    /// States at the accepted steps of the snapshot integration.
    #[default]
    Steps,
    /// States interpolated onto `snapshot_points` equidistant times.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorBlock {
    /// Settings for the snapshot run on the model horizon.
    pub snapshot: IntegratorConfig,
    /// Settings shared by the full and reduced evaluation runs.
    pub evaluation: IntegratorConfig,
    #[serde(default)]
    pub snapshots: SnapshotSource,
    #[serde(default = "default_points")]
    pub snapshot_points: usize,
    /// Equidistant evaluation points for errors and statistics.
    #[serde(default = "default_points")]
    pub grid_points: usize,
}

fn default_points() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorConfig {
    /// Reduced dimensions to sweep.
    pub r: Vec<usize>,
    /// Evaluation horizon as a multiple of the snapshot horizon length.
    #[serde(default = "default_multiplier")]
    pub reuse_multiplier: f64,
}

fn default_multiplier() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Root for run directories; relative paths are resolved against
    /// `STOCHMOR_OUTPUT_ROOT` when set, else the working directory.
    pub directory: PathBuf,
    pub plots: bool,
    /// Write the snapshot matrix as a binary trajectory.
    pub snapshots: bool,
    /// Write Galerkin matrices as sparse triplets.
    pub triplets: bool,
    /// Collocation: cache node trajectories inside the run directory.
    pub node_cache: bool,
    /// Reduced dimensions for which per-time error and statistics CSVs are written.
    /// Empty means all.
    pub detail_r: Vec<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("runs"),
            plots: true,
            snapshots: false,
            triplets: false,
            node_cache: false,
            detail_r: Vec::new(),
        }
    }
}

pub const OUTPUT_ROOT_VAR: &str = "STOCHMOR_OUTPUT_ROOT";

/// Names of the configurations shipped with the crate.
pub const BUNDLED: [&str; 6] = [
    "scrapie-galerkin",
    "scrapie-collocation",
    "amplifier-galerkin",
    "amplifier-collocation",
    "amplifier-galerkin-desk",
    "amplifier-collocation-desk",
];

pub fn bundled(name: &str) -> Option<&'static str> {
    Some(match name {
        "scrapie-galerkin" => include_str!("../../configs/scrapie-galerkin.toml"),
        "scrapie-collocation" => include_str!("../../configs/scrapie-collocation.toml"),
        "amplifier-galerkin" => include_str!("../../configs/amplifier-galerkin.toml"),
        "amplifier-collocation" => include_str!("../../configs/amplifier-collocation.toml"),
        "amplifier-galerkin-desk" => include_str!("../../configs/amplifier-galerkin-desk.toml"),
        "amplifier-collocation-desk" => include_str!("../../configs/amplifier-collocation-desk.toml"),
        _ => return None,
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a bundled name is accepted in place of a path.
    /// A relative model file is resolved against the config's directory.
    pub fn load(path_or_name: &str) -> Result<Self> {
        if let Some(text) = bundled(path_or_name) {
            return Self::from_toml(text);
        }
        let path = Path::new(path_or_name);
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(file) = &cfg.model.file {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.model.file = Some(dir.join(file));
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("invalid run name '{}'", self.name));
        }
        match (&self.model.builtin, &self.model.file) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("model needs exactly one of 'builtin' and 'file'".into()),
        }
        if let Some([a, b]) = self.model.horizon {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return bad("model horizon must be increasing".into());
            }
        }
        if let Some(v) = self.uq.variation {
            if !(v > 0.0 && v < 1.0) {
                return bad("uq.variation must lie in (0, 1)".into());
            }
        }
        if self.uq.lower.is_some() != self.uq.upper.is_some() {
            return bad("uq.lower and uq.upper go together".into());
        }
        for spec in std::iter::once(&self.quadrature.rule).chain(self.quadrature.nonlinear.as_ref()) {
            match *spec {
                RuleSpec::Tensor { per_axis: 0 } | RuleSpec::Sparse { level: 0, .. } => {
                    return bad("quadrature sizes start at 1".into())
                }
                _ => {}
            }
        }
        if self.method == MethodKind::Collocation && self.quadrature.nonlinear.is_some() {
            return bad("quadrature.nonlinear applies to galerkin only".into());
        }
        self.integrator
            .snapshot
            .validate()
            .and_then(|_| self.integrator.evaluation.validate())
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.integrator.grid_points < 2 || self.integrator.snapshot_points < 2 {
            return bad("grids need at least 2 points".into());
        }
        if self.mor.r.is_empty() || self.mor.r.contains(&0) {
            return bad("mor.r must list positive dimensions".into());
        }
        if !(self.mor.reuse_multiplier >= 1.0 && self.mor.reuse_multiplier.is_finite()) {
            return bad("mor.reuse_multiplier must be at least 1".into());
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ParametricSystem<f64>> {
        let mut model = match (&self.model.builtin, &self.model.file) {
            (Some(name), _) => builtin(name)?,
            (None, Some(file)) => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| Error::Config(format!("cannot read model {}: {e}", file.display())))?;
                CustomModel::from_toml(&text)?.build()?
            }
            (None, None) => return Err(Error::Config("no model given".into())),
        };
        if let Some([a, b]) = self.model.horizon {
            model.horizon = (a, b);
        }
        if let Some(nominal) = &self.model.nominal {
            if nominal.len() != model.q() {
                return Err(Error::Config(format!(
                    "model has {} parameters, {} nominal values given",
                    model.q(),
                    nominal.len()
                )));
            }
            model.nominal = nominal.clone();
        }
        if let Some(v) = self.uq.variation {
            model.variation = v;
        }
        model.validate()?;
        Ok(model)
    }

    pub fn parameter_box(&self, model: &ParametricSystem<f64>) -> Result<ParameterBox<f64>> {
        match (&self.uq.lower, &self.uq.upper) {
            (Some(lo), Some(hi)) => ParameterBox::new(lo.clone(), hi.clone(), model.nominal.clone()),
            _ => model.parameter_box(None),
        }
    }

    pub fn basis(&self, bx: ParameterBox<f64>) -> Result<BasisSpec<f64>> {
        BasisSpec::total_degree(bx, self.uq.degree)
    }

    /// Output root after applying the environment override.
    pub fn output_root(&self) -> PathBuf {
        let dir = &self.outputs.directory;
        if dir.is_absolute() {
            return dir.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) => PathBuf::from(root).join(dir),
            None => dir.clone(),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join(&self.name)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_round_trip() {
        for name in BUNDLED {
            let cfg = RunConfig::load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(cfg, again, "{name}");
            assert_eq!(cfg.name, name);
            cfg.build_model().unwrap();
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{}\nextra = 1\n", bundled("scrapie-galerkin").unwrap());
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
        let text = bundled("scrapie-galerkin")
            .unwrap()
            .replace("grid_points", "grid_pints");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let base = RunConfig::load("scrapie-galerkin").unwrap();
        let mut c = base.clone();
        c.mor.r = vec![];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.integrator.snapshot.rel_tol = -1.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.model.file = Some("x.toml".into());
        assert!(c.validate().is_err());
        let mut c = base;
        c.quadrature.rule = RuleSpec::Tensor { per_axis: 0 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::load("scrapie-galerkin").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.mor.r.push(31);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
