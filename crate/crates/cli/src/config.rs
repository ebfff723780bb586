//! JSON run configuration.

use std::path::{Path, PathBuf};

use gradhjb::convex::{BodySpec, ConstraintFunction, ConstraintSpec};
use gradhjb::mc::PolicyRegion;
use gradhjb::operator::{EllipticProblem, ProblemSpec};
use gradhjb::solver::ContinuationSchedule;
use serde::Deserialize;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub constraint: Option<ConstraintSpec>,
    /// Interior points per axis.
    pub shape: Vec<usize>,
    #[serde(default)]
    pub schedule: ContinuationSchedule,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub study: Option<StudyConfig>,
    #[serde(default)]
    pub mc: Option<McConfig>,
    /// Used when `--out` is not given.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub envelope: bool,
    pub penalty: bool,
    pub sandwich: bool,
    pub comparison: bool,
    pub complementarity: bool,
    /// Random `(p, z, t)` triples for the envelope checks.
    pub envelope_samples: usize,
    pub seed: u64,
    /// Bound on the final complementarity residual.
    pub complementarity_tol: f64,
    /// Test hook: `"concave_penalty"` swaps the penalty bridge for a concave one.
    pub inject_fault: Option<String>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            envelope: true,
            penalty: true,
            sandwich: true,
            comparison: true,
            complementarity: true,
            envelope_samples: 200,
            seed: 0,
            complementarity_tol: 5e-2,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub shapes: Vec<Vec<usize>>,
    pub eps_levels: Vec<f64>,
    /// Exact solution as an expression in `x1[, x2]`; the finest solve is the
    /// reference when absent.
    #[serde(default)]
    pub exact: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    /// Constraint body `K`, which prices the control.
    pub body: BodySpec,
    pub x0: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Explicit policy region; otherwise it is read off a solve with `constraint`.
    #[serde(default)]
    pub region: Option<PolicyRegion>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CONFIG_VERSION as u64 => {}
            Some(v) => return Err(CliError::Config(format!("unsupported config version {v}, expected {CONFIG_VERSION}"))),
            None => return Err(CliError::Config("missing \"version\": 1".into())),
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        debug_assert_eq!(self.version, CONFIG_VERSION);
        let dim = self.problem.domain.len();
        check_shape(&self.shape, dim)?;
        if let Some(s) = &self.study {
            for shape in &s.shapes {
                check_shape(shape, dim)?;
            }
        }
        self.schedule.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Parses every expression and checks the ellipticity, reaction and source floors.
    pub fn problem(&self) -> Result<EllipticProblem, CliError> {
        let p = EllipticProblem::from_spec(&self.problem).map_err(|e| CliError::Config(e.to_string()))?;
        p.validate(&self.shape).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn constraint(&self) -> Result<ConstraintFunction, CliError> {
        let spec = self
            .constraint
            .as_ref()
            .ok_or_else(|| CliError::Config("missing \"constraint\"".into()))?;
        ConstraintFunction::from_spec(spec, self.problem.domain.len()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn out_dir(&self, cli: Option<&Path>) -> Result<PathBuf, CliError> {
        let dir = cli
            .map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .ok_or_else(|| CliError::Config("no output directory: pass --out or set \"out\"".into()))?;
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }
}

fn check_shape(shape: &[usize], dim: usize) -> Result<(), CliError> {
    if shape.len() != dim {
        return Err(CliError::Config(format!("shape {shape:?} does not match a {dim}-dimensional domain")));
    }
    if shape.iter().any(|n| *n < 3) {
        return Err(CliError::Config(format!("shape {shape:?}: need at least 3 points per axis")));
    }
    Ok(())
}
