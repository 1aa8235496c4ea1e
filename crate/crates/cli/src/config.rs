//! Run configuration: one JSON document, strict schema, every field
//! defaulted so the resolved form can be written back verbatim.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shellopt::follower::NewtonOptions;
use shellopt::leader::{LeaderConfig, NoiseModel, TrackingSelector};
use shellopt::shapes::RoofShape;
use shellopt::{DirichletSelector, ElasticParams};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    /// Wavefront OBJ file, relative to the config file.
    Obj(PathBuf),
    /// Procedural roof.
    Roof(RoofShape),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ThicknessSource {
    Uniform(f64),
    /// CSV with header `face_index,thickness`, relative to the config file.
    File(PathBuf),
}

/// Cylinder of admissible force coefficients and its barrier weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceConfig {
    pub fmax_xy: f64,
    pub fmax_z: f64,
    pub alpha: f64,
}

impl Default for ForceConfig {
    fn default() -> Self {
        Self { fmax_xy: 0.0015, fmax_z: 0.003, alpha: 1e-4 }
    }
}

/// Measures reported by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskOptions {
    pub cvar_levels: Vec<f64>,
    /// Target of the expected excess; the sample mean when absent.
    pub excess_target: Option<f64>,
    pub excess_order: f64,
    pub semideviation_order: f64,
}

impl Default for RiskOptions {
    fn default() -> Self {
        Self { cvar_levels: vec![0.5, 0.9, 0.95], excess_target: None, excess_order: 2.0, semideviation_order: 2.0 }
    }
}

/// Grid and gap settings of the `toy` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyOptions {
    pub u_min: f64,
    pub u_max: f64,
    pub points: usize,
    pub eta: f64,
    /// Grid points per axis of the force box used for `Φ_η`.
    pub eta_resolution: usize,
    pub gap_k: Vec<u32>,
    pub gap_points: usize,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self { u_min: 0.5, u_max: 1.5, points: 101, eta: 0.05, eta_resolution: 101, gap_k: vec![10, 100, 1000], gap_points: 10_000 }
    }
}

fn default_dirichlet() -> DirichletSelector {
    DirichletSelector::ZThreshold(1e-9)
}

fn default_tracking() -> TrackingSelector {
    TrackingSelector::Full
}

fn default_checkpoint() -> usize {
    10
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mesh: Option<MeshSource>,
    #[serde(default = "default_dirichlet")]
    pub dirichlet: DirichletSelector,
    #[serde(default = "default_tracking")]
    pub tracking: TrackingSelector,
    #[serde(default)]
    pub elastic: ElasticParams,
    #[serde(default)]
    pub force: ForceConfig,
    #[serde(default)]
    pub leader: LeaderConfig,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub follower: NewtonOptions,
    /// Design for `follower` and `simulate`, start of `solve`. The uniform
    /// start rule applies when absent.
    #[serde(default)]
    pub thickness: Option<ThicknessSource>,
    #[serde(default)]
    pub risk: RiskOptions,
    #[serde(default)]
    pub toy: ToyOptions,
    /// Leader iterations between thickness checkpoints.
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl RunConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut config: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(MeshSource::Obj(p)) = &mut self.mesh {
            join(p);
        }
        if let Some(ThicknessSource::File(p)) = &mut self.thickness {
            join(p);
        }
        join(&mut self.output);
    }

    /// Checks everything that does not need the mesh.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        self.leader.validate().map_err(CliError::Config)?;
        self.noise.validate().map_err(CliError::Config)?;
        let ElasticParams { mu, lambda, gamma } = self.elastic;
        if !(mu > 0.0 && lambda >= 0.0 && gamma >= 0.0 && mu.is_finite() && lambda.is_finite() && gamma.is_finite()) {
            return fail(format!("elastic constants need mu > 0, lambda >= 0, gamma >= 0, got ({mu}, {lambda}, {gamma})"));
        }
        let ForceConfig { fmax_xy, fmax_z, alpha } = self.force;
        if !(fmax_xy > 0.0 && fmax_z > 0.0 && fmax_xy.is_finite() && fmax_z.is_finite()) {
            return fail(format!("force bounds must be positive and finite, got fmax_xy {fmax_xy}, fmax_z {fmax_z}"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return fail(format!("force barrier weight alpha must be positive, got {alpha}"));
        }
        if self.follower.max_iter == 0 || !(self.follower.grad_tol >= 0.0) {
            return fail("follower needs max_iter >= 1 and grad_tol >= 0".into());
        }
        if let Some(ThicknessSource::Uniform(v)) = self.thickness {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("uniform thickness must be positive, got {v}"));
            }
        }
        if let Some(&b) = self.risk.cvar_levels.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return fail(format!("cvar level must lie in [0, 1), got {b}"));
        }
        if !(self.risk.excess_order >= 1.0 && self.risk.semideviation_order >= 1.0) {
            return fail("risk orders must be >= 1".into());
        }
        let t = &self.toy;
        if !(t.u_min > 0.0 && t.u_min < t.u_max && t.points >= 2 && t.eta > 0.0 && t.eta_resolution >= 2 && t.gap_points >= 2) {
            return fail("toy options need 0 < u_min < u_max, points >= 2, eta > 0, eta_resolution >= 2, gap_points >= 2".into());
        }
        if let Some(&k) = t.gap_k.iter().find(|&&k| k < 2) {
            return fail(format!("toy gap_k entries must be >= 2, got {k}"));
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be >= 1".into());
        }
        Ok(())
    }

    pub fn mesh_source(&self) -> Result<&MeshSource, CliError> {
        self.mesh.as_ref().ok_or_else(|| CliError::Config("this command needs a mesh".into()))
    }
}
