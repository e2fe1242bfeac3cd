//! Configurations and drivers of the single-shot subcommands.

use rerm::calibration::{
    calibrate, default_p0, design_samples, estimate_mean_width_mc, estimate_small_ball, moment_growth_diagnostic, CalibrationConstants,
    CalibrationResult, FixedPoint, LambdaTrack, MomentGrowthReport, SmallBallReport,
};
use rerm::model::{generate_dataset, population_error, DesignLaw, DesignSpec, Shape};
use rerm::rates::{combined_rate, complexity_rate, minimax_rate_l1, RateEstimate, RateQuery, RateRow};
use rerm::regularizers::{Regularizer, WidthEstimate};
use rerm::solver::{solve_constrained, solve_rerm, Solution, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::config::{NoiseConfig, TargetFamily};
use crate::ConfigError;

/// `solve`: draw one instance and fit it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub regularizer: Regularizer,
    pub shape: Shape,
    pub n: usize,
    pub design: DesignLaw,
    pub target: TargetFamily,
    /// `Ψ(t*)`.
    pub rho: f64,
    pub noise: NoiseConfig,
    /// Penalty level; exactly one of `lambda` and `radius` is given.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Constraint radius for least squares over `{Ψ ≤ radius}`.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveOutput {
    pub solution: Solution,
    pub t_star: Vec<f64>,
    pub error: f64,
}

pub fn run_solve(config: &SolveConfig) -> Result<SolveOutput, ConfigError> {
    let design = DesignSpec::new(config.design.clone(), config.shape)?;
    config.regularizer.check_dim(config.shape.dim())?;
    let target = config.target.build(&config.regularizer, config.shape, config.rho, config.seed)?;
    let instance = generate_dataset(&design, &target, &config.noise.spec()?, config.n, config.seed)?;
    let solution = match (config.lambda, config.radius) {
        (Some(lambda), None) => solve_rerm(&instance, &config.regularizer, lambda, &config.solver)?,
        (None, Some(radius)) => solve_constrained(&instance, &config.regularizer, radius, &config.solver)?,
        _ => return Err(ConfigError::Invalid("give exactly one of `lambda` and `radius`".into())),
    };
    let error = population_error(solution.t_hat.view(), instance.t_star(), &design)?;
    Ok(SolveOutput { t_star: target.t_star, solution, error })
}

fn half() -> f64 {
    0.5
}

fn small_ball_eps() -> f64 {
    0.617
}

fn one() -> f64 {
    1.0
}

/// `calibrate`: λ, widths and fixed points for one regularizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrateConfig {
    pub regularizer: Regularizer,
    pub shape: Shape,
    pub n: usize,
    pub sigma_q: f64,
    #[serde(default = "half")]
    pub kappa: f64,
    #[serde(default = "small_ball_eps")]
    pub eps: f64,
    #[serde(default = "one")]
    pub c_user: f64,
    #[serde(default = "mean_width")]
    pub track: LambdaTrack,
    /// Radii at which `r²(ρ)` is tabulated.
    #[serde(default)]
    pub rho: Vec<f64>,
    /// Monte Carlo draws for an empirical width next to the closed form; zero skips it.
    #[serde(default)]
    pub width_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn mean_width() -> LambdaTrack {
    LambdaTrack::MeanWidth
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrateOutput {
    pub calibration: CalibrationResult,
    pub fixed_points: Vec<(f64, FixedPoint)>,
    pub width_mc: Option<WidthEstimate>,
}

pub fn run_calibrate(config: &CalibrateConfig) -> Result<CalibrateOutput, ConfigError> {
    let constants =
        CalibrationConstants::new(config.kappa, config.eps, config.regularizer.eta(), config.sigma_q, config.c_user)?;
    let calibration = calibrate(&config.regularizer, &config.shape, config.n, config.sigma_q, &constants, &config.track)?;
    let fixed_points = config
        .rho
        .iter()
        .map(|&rho| Ok((rho, calibration.r_of_rho.evaluate(rho)?)))
        .collect::<Result<Vec<_>, rerm::Error>>()?;
    let width_mc = if config.width_samples > 0 {
        Some(estimate_mean_width_mc(&config.regularizer, &config.shape, config.width_samples, config.seed)?)
    } else {
        None
    };
    Ok(CalibrateOutput { calibration, fixed_points, width_mc })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimaxQuery {
    pub rho: f64,
    pub sigma: f64,
    pub n: usize,
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedQuery {
    pub s: usize,
    pub rho: f64,
    pub sigma: f64,
    pub n: usize,
    pub d: usize,
}

/// `rates`: tabulate theoretical rates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatesConfig {
    #[serde(default)]
    pub complexity: Vec<RateQuery>,
    #[serde(default)]
    pub minimax_l1: Vec<MinimaxQuery>,
    #[serde(default)]
    pub combined: Vec<CombinedQuery>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatesOutput {
    pub complexity: Vec<RateRow>,
    pub minimax_l1: Vec<(MinimaxQuery, RateEstimate)>,
    pub combined: Vec<(CombinedQuery, RateEstimate)>,
}

pub fn run_rates(config: &RatesConfig) -> Result<RatesOutput, ConfigError> {
    let complexity = config
        .complexity
        .iter()
        .map(|q| Ok(RateRow::from_query(q, &complexity_rate(q)?)))
        .collect::<Result<Vec<_>, rerm::Error>>()?;
    let minimax_l1 = config
        .minimax_l1
        .iter()
        .map(|q| Ok((q.clone(), minimax_rate_l1(q.rho, q.sigma, q.n, q.d)?)))
        .collect::<Result<Vec<_>, rerm::Error>>()?;
    let combined = config
        .combined
        .iter()
        .map(|q| Ok((q.clone(), combined_rate(q.s, q.rho, q.sigma, q.n, q.d)?)))
        .collect::<Result<Vec<_>, rerm::Error>>()?;
    Ok(RatesOutput { complexity, minimax_l1, combined })
}

/// `diagnose`: small-ball and moment-growth checks of a design law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    pub design: DesignLaw,
    pub shape: Shape,
    pub samples: usize,
    #[serde(default = "half")]
    pub kappa: f64,
    #[serde(default = "default_directions")]
    pub directions: usize,
    /// Moment cap; defaults to `a log D`.
    #[serde(default)]
    pub p0: Option<f64>,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_directions() -> usize {
    50
}

fn default_a() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnoseOutput {
    pub small_ball: SmallBallReport,
    pub moment_growth: MomentGrowthReport,
}

pub fn run_diagnose(config: &DiagnoseConfig) -> Result<DiagnoseOutput, ConfigError> {
    let design = DesignSpec::new(config.design.clone(), config.shape)?;
    let small_ball = estimate_small_ball(&design, config.kappa, config.directions, config.samples, config.seed)?;
    let x = design_samples(&design, config.samples, config.seed);
    let p0 = config.p0.unwrap_or_else(|| default_p0(config.shape.dim(), config.a));
    let moment_growth = moment_growth_diagnostic(x.view(), p0)?;
    Ok(DiagnoseOutput { small_ball, moment_growth })
}
