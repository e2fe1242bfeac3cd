//! JSON configuration of a parameter sweep.
//!
//! ```json
//! {
//!   "grid": { "n": [50, 100, 200], "dimension": [400], "rho": [5.0] },
//!   "trials_per_cell": 20,
//!   "regularizer": { "kind": "l1" },
//!   "design": { "law": "gaussian-isotropic" },
//!   "target": { "family": "dense-spread" },
//!   "noise": { "law": "gaussian", "scale": 1.0 },
//!   "lambda_policy": { "policy": "calibrated", "track": "limited-moment", "noise_level": "scale" },
//!   "master_seed": 7,
//!   "output": { "records": "records.csv", "report_dir": "report" }
//! }
//! ```

use std::path::{Path, PathBuf};

use rerm::model::{DesignLaw, DesignSpec, NoiseLaw, NoiseSpec, Shape, TargetSpec};
use rerm::regularizers::{slope_weights_bhq, Regularizer};
use rerm::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: Vec<usize>,
    pub dimension: Vec<usize>,
    pub rho: Vec<f64>,
}

/// A regularizer fixed once, or rebuilt for every dimension of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegularizerSpec {
    Family(RegularizerFamily),
    Fixed(Regularizer),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RegularizerFamily {
    /// SLOPE with weights `Φ^{-1}(1 − jq/(2d))`.
    SlopeBhq { q: f64 },
    /// Group norm over consecutive blocks of `size` coordinates.
    EqualGroups { size: usize },
}

impl RegularizerSpec {
    /// The regularizer and the parameter shape used at dimension `d`.
    pub fn instantiate(&self, d: usize) -> Result<(Regularizer, Shape), ConfigError> {
        let reg = match self {
            RegularizerSpec::Fixed(reg) => reg.clone(),
            RegularizerSpec::Family(RegularizerFamily::SlopeBhq { q }) => Regularizer::slope(slope_weights_bhq(d, *q)?)?,
            RegularizerSpec::Family(RegularizerFamily::EqualGroups { size }) => {
                if *size == 0 || !d.is_multiple_of(*size) {
                    return Err(ConfigError::Invalid(format!("group size {size} does not divide dimension {d}")));
                }
                Regularizer::groups((0..d / size).map(|g| (g * size..(g + 1) * size).collect()).collect())?
            }
        };
        let shape = match &reg {
            Regularizer::Schatten { m, t, .. } | Regularizer::MaxNorm { m, t, .. } => {
                if m * t != d {
                    return Err(ConfigError::Invalid(format!("dimension {d} does not match the {m}×{t} matrix penalty")));
                }
                Shape::matrix(*m, *t)
            }
            _ => Shape::vector(d),
        };
        reg.check_dim(d)?;
        Ok((reg, shape))
    }
}

/// Targets whose penalty value `Ψ(t*)` equals the grid's `rho`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum TargetFamily {
    /// All coordinates equal.
    DenseSpread,
    /// The first `s` coordinates equal, the rest zero.
    Sparse { s: usize },
    /// Rank-`rank` matrix with Gaussian factors drawn from the cell seed.
    LowRank { rank: usize },
}

impl TargetFamily {
    pub fn build(&self, reg: &Regularizer, shape: Shape, rho: f64, seed: u64) -> Result<TargetSpec, ConfigError> {
        let unit = match self {
            TargetFamily::DenseSpread => TargetSpec::dense_spread(shape, shape.dim() as f64)?,
            TargetFamily::Sparse { s } => TargetSpec::sparse(shape, *s, 1.0)?,
            TargetFamily::LowRank { rank } => TargetSpec::low_rank(shape, *rank, 1.0, seed)?,
        };
        let psi = reg.value(unit.t_star())?;
        if !(psi > 0.0) || !psi.is_finite() {
            return Err(ConfigError::Invalid(format!("the {} penalty of the target pattern is {psi}", reg.kind())));
        }
        let c = rho / psi;
        let target = match self {
            TargetFamily::DenseSpread => TargetSpec::dense_spread(shape, c * shape.dim() as f64)?,
            TargetFamily::Sparse { s } => {
                if rho == 0.0 {
                    return Err(ConfigError::Invalid("sparse targets need rho > 0".into()));
                }
                TargetSpec::sparse(shape, *s, c)?
            }
            TargetFamily::LowRank { rank } => TargetSpec::low_rank(shape, *rank, c, seed)?,
        };
        Ok(target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    #[serde(flatten)]
    pub law: NoiseLaw,
    #[serde(default)]
    pub scale: f64,
    #[serde(default = "default_q")]
    pub q: f64,
}

fn default_q() -> f64 {
    4.0
}

impl NoiseConfig {
    pub fn spec(&self) -> Result<NoiseSpec, ConfigError> {
        Ok(NoiseSpec::new(self.law, self.scale, self.q)?)
    }
}

/// Noise magnitude fed into a calibrated λ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLevel {
    /// `‖ξ‖_{L_q}`.
    #[default]
    SigmaQ,
    /// The scale parameter of the noise law.
    Scale,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Track {
    #[default]
    MeanWidth,
    /// `σ M √(log d/N)`, ℓ1 only.
    LimitedMoment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum LambdaPolicy {
    Calibrated {
        #[serde(default)]
        track: Track,
        #[serde(default)]
        noise_level: NoiseLevel,
        #[serde(default = "one")]
        c_user: f64,
    },
    Fixed {
        value: f64,
    },
    /// Every value is a separate cell.
    Grid {
        values: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Penalized least squares.
    #[default]
    Rerm,
    /// Least squares over `{Ψ ≤ Ψ(t*)}`.
    Constrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    #[serde(default = "default_records")]
    pub records: PathBuf,
    #[serde(default = "default_report_dir")]
    pub report_dir: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths { records: default_records(), report_dir: default_report_dir() }
    }
}

fn default_records() -> PathBuf {
    PathBuf::from("records.csv")
}

fn default_report_dir() -> PathBuf {
    PathBuf::from("report")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: Grid,
    pub trials_per_cell: usize,
    pub regularizer: RegularizerSpec,
    pub design: DesignLaw,
    pub target: TargetFamily,
    pub noise: NoiseConfig,
    pub lambda_policy: LambdaPolicy,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output: OutputPaths,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: SweepConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        Self::from_json(&text)
    }

    pub fn lambdas(&self) -> Vec<Option<f64>> {
        match &self.lambda_policy {
            LambdaPolicy::Grid { values } => values.iter().copied().map(Some).collect(),
            LambdaPolicy::Fixed { value } => vec![Some(*value)],
            LambdaPolicy::Calibrated { .. } => vec![None],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let grid = &self.grid;
        if grid.n.is_empty() || grid.dimension.is_empty() || grid.rho.is_empty() {
            return Err(ConfigError::Invalid("every grid axis needs at least one value".into()));
        }
        if grid.n.contains(&0) {
            return Err(ConfigError::Invalid("sample sizes must be positive".into()));
        }
        if grid.rho.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(ConfigError::Invalid("rho values must be finite and nonnegative".into()));
        }
        if self.trials_per_cell == 0 {
            return Err(ConfigError::Invalid("trials_per_cell must be at least 1".into()));
        }
        match &self.lambda_policy {
            LambdaPolicy::Fixed { value } if !(*value >= 0.0) => {
                return Err(ConfigError::Invalid(format!("fixed lambda must be nonnegative, got {value}")))
            }
            LambdaPolicy::Grid { values } if values.is_empty() || values.iter().any(|v| !(*v >= 0.0)) => {
                return Err(ConfigError::Invalid("lambda grid must be a nonempty list of nonnegative values".into()))
            }
            LambdaPolicy::Calibrated { c_user, track, .. } => {
                if !(*c_user > 0.0) {
                    return Err(ConfigError::Invalid(format!("c_user must be positive, got {c_user}")));
                }
                if *track == Track::LimitedMoment && !matches!(self.regularizer, RegularizerSpec::Fixed(Regularizer::L1)) {
                    return Err(ConfigError::Invalid("the limited-moment track applies to the l1 penalty only".into()));
                }
            }
            _ => {}
        }
        self.solver.validate()?;
        self.noise.spec()?;
        for &d in &grid.dimension {
            let (reg, shape) = self.regularizer.instantiate(d)?;
            DesignSpec::new(self.design.clone(), shape)?;
            for &rho in &grid.rho {
                self.target.build(&reg, shape, rho, 0)?;
            }
        }
        Ok(())
    }
}
