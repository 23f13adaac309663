//! Run configuration: a model block plus exactly one command block.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use herglotz_core::{AssumptionConstants, AuditBox, Discount, ModelSpec, Potential};

use crate::app::AppError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bvp: Option<BvpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolve: Option<EvolveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    /// Rows of `A`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinetic: Option<Vec<Vec<f64>>>,
    #[serde(default = "zero_potential")]
    pub potential: String,
    #[serde(default = "no_discount")]
    pub discount: Discount,
    #[serde(default = "AssumptionConstants::free")]
    pub constants: AssumptionConstants,
}

fn zero_potential() -> String {
    "0".into()
}

fn no_discount() -> Discount {
    Discount::Linear(0.0)
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec, AppError> {
        let bad = |e: herglotz_core::Error| AppError::Config(format!("model: {e}"));
        let potential = Potential::parse(&self.potential, self.dim).map_err(bad)?;
        match &self.kinetic {
            None => ModelSpec::with_identity(self.dim, potential, self.discount, self.constants).map_err(bad),
            Some(rows) => {
                if rows.len() != self.dim || rows.iter().any(|r| r.len() != self.dim) {
                    return Err(AppError::Config(format!(
                        "model: kinetic must be a {0}x{0} matrix",
                        self.dim
                    )));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                ModelSpec::new(self.dim, &flat, potential, self.discount, self.constants).map_err(bad)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvpConfig {
    pub a: f64,
    pub b: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default)]
    pub u0: f64,
    #[serde(rename = "N", default = "default_n")]
    pub n: usize,
    #[serde(default = "default_gtol")]
    pub gtol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// RK4 steps of the characteristic shot.
    #[serde(default = "default_shoot_steps")]
    pub shoot_steps: usize,
}

fn default_n() -> usize {
    128
}

fn default_gtol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    20_000
}

fn default_shoot_steps() -> usize {
    256
}

impl BvpConfig {
    pub fn check(&self, dim: usize) -> Result<(), AppError> {
        if self.x.len() != dim || self.y.len() != dim {
            return Err(AppError::Config(format!("bvp: x and y need {dim} coordinates")));
        }
        if !(self.b > self.a) {
            return Err(AppError::Config(format!(
                "bvp: need a < b, got {} and {}",
                self.a, self.b
            )));
        }
        if self.n < 2 {
            return Err(AppError::Config("bvp: N must be at least 2".into()));
        }
        Ok(())
    }
}

/// Initial data: an expression in `x1..xn` or a grid CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiSource {
    Expr(String),
    Csv { csv: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub bounds: Vec<(f64, f64)>,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorName {
    #[default]
    Negative,
    Positive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    pub phi: PhiSource,
    pub grid: GridConfig,
    #[serde(default)]
    pub t0: f64,
    pub t: f64,
    /// Defaults to `[t]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa2: Option<f64>,
    #[serde(default)]
    pub operator: OperatorName,
    #[serde(default)]
    pub refine: bool,
    #[serde(default = "default_evolve_steps")]
    pub shoot_steps: usize,
}

fn default_evolve_steps() -> usize {
    32
}

impl EvolveConfig {
    pub fn snapshot_times(&self) -> Result<Vec<f64>, AppError> {
        let times = self.snapshots.clone().unwrap_or_else(|| vec![self.t]);
        if times.is_empty() {
            return Err(AppError::Config("evolve: snapshots must not be empty".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AppError::Config(
                "evolve: snapshots must be strictly increasing".into(),
            ));
        }
        if times.iter().any(|s| !(*s > self.t0 && *s <= self.t)) {
            return Err(AppError::Config(format!(
                "evolve: snapshots must lie in ({}, {}]",
                self.t0, self.t
            )));
        }
        Ok(times)
    }

    pub fn kappa(&self) -> Result<Option<(f64, f64)>, AppError> {
        match (self.kappa1, self.kappa2) {
            (None, None) => Ok(None),
            (Some(a), Some(b)) => Ok(Some((a, b))),
            _ => Err(AppError::Config(
                "evolve: give both kappa1 and kappa2 or neither".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub a: f64,
    pub b: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default)]
    pub u0: f64,
    #[serde(rename = "N", default = "default_n")]
    pub n: usize,
    /// Curve CSV from an earlier `bvp` run; the minimizer is recomputed when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<PathBuf>,
    /// Random directions for the gradient check.
    #[serde(default = "default_directions")]
    pub gradient_directions: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_directions() -> usize {
    5
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub herglotz: f64,
    pub erdmann: f64,
    pub constancy: f64,
    /// Relative mismatch of directional derivatives.
    pub gradient: f64,
    /// `|h_shoot − J| ≤ shooting·(1 + |J|)`.
    pub shooting: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            herglotz: 1e-2,
            erdmann: 1e-2,
            constancy: 1e-2,
            gradient: 1e-4,
            shooting: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub t_range: (f64, f64),
    pub x_radius: f64,
    pub v_radius: f64,
    pub u_radius: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    4096
}

impl AuditConfig {
    pub fn audit_box(&self) -> Result<AuditBox, AppError> {
        let (t0, t1) = self.t_range;
        let radii = [self.x_radius, self.v_radius, self.u_radius];
        if !(t1 >= t0) || radii.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(AppError::Config(
                "audit: need an ordered t_range and finite radii >= 0".into(),
            ));
        }
        Ok(AuditBox {
            t_range: self.t_range,
            x_radius: self.x_radius,
            v_radius: self.v_radius,
            u_radius: self.u_radius,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub t: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(default)]
    pub u: f64,
    /// Search radius inputs for the Lax-Oleinik infimum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa2: Option<f64>,
    #[serde(default)]
    pub phi_abs: f64,
}

/// The one command block a config carries.
pub enum Command<'a> {
    Bvp(&'a BvpConfig),
    Evolve(&'a EvolveConfig),
    Verify(&'a VerifyConfig),
    Audit(&'a AuditConfig),
    Bounds(&'a BoundsConfig),
}

impl Command<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Bvp(_) => "bvp",
            Command::Evolve(_) => "evolve",
            Command::Verify(_) => "verify",
            Command::Audit(_) => "audit",
            Command::Bounds(_) => "bounds",
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, AppError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| AppError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.command()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Io(format!("reading {}: {e}", path.display())))?;
        RunConfig::parse(&text).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn command(&self) -> Result<Command<'_>, AppError> {
        let mut found = Vec::new();
        if let Some(c) = &self.bvp {
            found.push(Command::Bvp(c));
        }
        if let Some(c) = &self.evolve {
            found.push(Command::Evolve(c));
        }
        if let Some(c) = &self.verify {
            found.push(Command::Verify(c));
        }
        if let Some(c) = &self.audit {
            found.push(Command::Audit(c));
        }
        if let Some(c) = &self.bounds {
            found.push(Command::Bounds(c));
        }
        if found.len() != 1 {
            return Err(AppError::Config(format!(
                "expected exactly one command block, found {}",
                found.len()
            )));
        }
        Ok(found.pop().expect("one block"))
    }

    /// SHA-256 of the canonical config, without the output directory so that
    /// reruns into different directories stay byte-identical.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut canon = self.clone();
        canon.output = None;
        let text = serde_json::to_string(&canon).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
