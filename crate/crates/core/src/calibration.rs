//! Choosing λ and predicting estimation radii from Gaussian mean-widths,
//! plus empirical diagnostics for the distributional assumptions behind
//! those choices.
//!
//! Every absolute constant is folded into a single user multiplier
//! `c_user`, so the quantities here are meaningful up to constants only.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{matvec, norm2, psd_sqrt, quad_form};
use crate::model::{DesignSpec, ProblemInstance, Shape};
use crate::regularizers::{monte_carlo_width, Regularizer, WidthEstimate, WIDTH_CONVENTION};

/// Minimum number of design samples per tested direction.
pub const MIN_SMALL_BALL_SAMPLES: usize = 1000;

/// Number of points on the geometric moment grid.
pub const MOMENT_GRID_POINTS: usize = 20;

const SMALL_BALL_DESIGN_STREAM: u64 = 0;
const SMALL_BALL_DIRECTION_STREAM: u64 = 1;

/// Constants of the fixed-point and λ formulas.
///
/// Built from the small-ball parameters `(κ, ε)`, the quasi-triangle
/// constant `η` and the noise level `σ_q`:
/// `α = κε/c`, `β = κ²ε/(cσ_q)`, `γ = η³σ_q`, `θ = κ²ε/16`, `τ = 3/(80η³)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConstants {
    pub alpha: f64,
    /// `None` for noise-free problems, where the linear branch is absent.
    pub beta: Option<f64>,
    pub gamma: f64,
    pub theta: f64,
    pub tau: f64,
    pub c_user: f64,
}

impl CalibrationConstants {
    pub fn new(kappa: f64, eps: f64, eta: f64, sigma_q: f64, c_user: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(invalid(format!("kappa must lie in (0, 1], got {kappa}")));
        }
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(invalid(format!("eps must lie in (0, 1], got {eps}")));
        }
        if !(eta >= 1.0) || !eta.is_finite() {
            return Err(invalid(format!("eta must be at least 1, got {eta}")));
        }
        if !(sigma_q >= 0.0) || !sigma_q.is_finite() {
            return Err(invalid(format!("sigma_q must be nonnegative, got {sigma_q}")));
        }
        if !(c_user > 0.0) || !c_user.is_finite() {
            return Err(invalid(format!("c_user must be positive, got {c_user}")));
        }
        Ok(CalibrationConstants {
            alpha: kappa * eps / c_user,
            beta: (sigma_q > 0.0).then(|| kappa * kappa * eps / (c_user * sigma_q)),
            gamma: eta.powi(3) * sigma_q,
            theta: kappa * kappa * eps / 16.0,
            tau: 3.0 / (80.0 * eta.powi(3)),
            c_user,
        })
    }

    /// Gaussian design (`κ = 1/2`, `ε = 2Φ(−1/2)`) with a norm penalty.
    pub fn gaussian(sigma_q: f64) -> Result<Self> {
        Self::new(0.5, 0.617, 1.0, sigma_q, 1.0)
    }
}

/// Monte Carlo mean-width `E Ψ*(G)` of the unit ball under an isotropic design.
pub fn estimate_mean_width_mc(reg: &Regularizer, shape: &Shape, samples: usize, seed: u64) -> Result<WidthEstimate> {
    monte_carlo_width(reg, shape, samples, seed, None)
}

/// Mean-width of the unit ball in the geometry of `design`.
///
/// Isotropic laws reduce to [`estimate_mean_width_mc`]; a design with an
/// explicit covariance is whitened through `Σ^{1/2}`.
pub fn estimate_mean_width_for_design(
    reg: &Regularizer,
    design: &DesignSpec,
    samples: usize,
    seed: u64,
) -> Result<WidthEstimate> {
    design.validate()?;
    match design.covariance() {
        Some(sigma) => monte_carlo_width(reg, &design.shape, samples, seed, Some(&psd_sqrt(&sigma))),
        None if design.is_isotropic() => estimate_mean_width_mc(reg, &design.shape, samples, seed),
        None => Err(Error::Refused(
            "non-isotropic width needs an explicit covariance".to_string(),
        )),
    }
}

/// `ℓ*(E) = √D` for the Euclidean unit ball `E` (isotropic design).
pub fn euclidean_width(shape: &Shape) -> WidthEstimate {
    WidthEstimate::closed_form((shape.dim() as f64).sqrt(), "sqrt(D)")
}

/// Which term of the fixed-point formula produced `r²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `Λ(ρ) = 0`.
    Trivial,
    /// `N ≥ (ℓ*(E)/α)²`: only the linear term `Λ/β` is used.
    LargeSample,
    /// Small sample, `Λ/β ≥ Λ²/α²`.
    LinearDominated,
    /// Small sample, `Λ²/α² > Λ/β`.
    QuadraticDominated,
    /// `β` undefined: the quadratic term alone.
    NoiseFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub r_squared: f64,
    pub regime: Regime,
}

/// The map `ρ ↦ r²(ρ)` for fixed widths, sample size and constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointMap {
    pub width_k: f64,
    pub width_e: f64,
    pub n: usize,
    pub alpha: f64,
    pub beta: Option<f64>,
}

impl FixedPointMap {
    pub fn new(n: usize, constants: &CalibrationConstants, width_k: f64, width_e: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("sample size must be positive"));
        }
        if !(width_k >= 0.0 && width_e >= 0.0) {
            return Err(invalid("widths must be nonnegative"));
        }
        Ok(FixedPointMap {
            width_k,
            width_e,
            n,
            alpha: constants.alpha,
            beta: constants.beta,
        })
    }

    /// `Λ(ρ) = ρ ℓ*(K)/√N`.
    pub fn complexity(&self, rho: f64) -> f64 {
        rho * self.width_k / (self.n as f64).sqrt()
    }

    /// Sample size above which the quadratic term is dropped.
    pub fn large_sample_threshold(&self) -> f64 {
        (self.width_e / self.alpha).powi(2)
    }

    pub fn evaluate(&self, rho: f64) -> Result<FixedPoint> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(invalid(format!("rho must be nonnegative, got {rho}")));
        }
        let lambda = self.complexity(rho);
        if lambda == 0.0 {
            return Ok(FixedPoint { r_squared: 0.0, regime: Regime::Trivial });
        }
        let quadratic = (lambda / self.alpha).powi(2);
        let Some(beta) = self.beta else {
            return Ok(FixedPoint { r_squared: quadratic, regime: Regime::NoiseFree });
        };
        let linear = lambda / beta;
        let point = if self.n as f64 >= self.large_sample_threshold() {
            FixedPoint { r_squared: linear, regime: Regime::LargeSample }
        } else if quadratic > linear {
            FixedPoint { r_squared: quadratic, regime: Regime::QuadraticDominated }
        } else {
            FixedPoint { r_squared: linear, regime: Regime::LinearDominated }
        };
        Ok(point)
    }
}

/// `r²(ρ)` from the mean-width bounds on the two fixed points.
pub fn fixed_point_r(
    rho: f64,
    n: usize,
    constants: &CalibrationConstants,
    width_k: &WidthEstimate,
    width_e: &WidthEstimate,
) -> Result<FixedPoint> {
    FixedPointMap::new(n, constants, width_k.value, width_e.value)?.evaluate(rho)
}

/// How λ is derived from the problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "track", rename_all = "kebab-case")]
pub enum LambdaTrack {
    /// `λ = c γ ℓ*(K)/√N` with `γ = η³σ_q`.
    MeanWidth,
    /// `λ = c σ_q M √(log d / N)` for the ℓ1 penalty under moment growth,
    /// `M` the largest coordinate `L2` norm.
    LimitedMoment { m: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// Set when `σ_q = 0`: any positive λ works and `0⁺` is reported.
    pub noise_free: bool,
    pub track: LambdaTrack,
}

pub fn lambda_rerm(
    reg: &Regularizer,
    shape: &Shape,
    n: usize,
    sigma_q: f64,
    constants: &CalibrationConstants,
    track: &LambdaTrack,
) -> Result<LambdaChoice> {
    let width = reg.mean_width_formula(shape)?;
    lambda_from_width(reg, shape, n, sigma_q, constants, track, width.value)
}

/// [`lambda_rerm`] with the width of the unit ball supplied by the caller.
pub fn lambda_from_width(
    reg: &Regularizer,
    shape: &Shape,
    n: usize,
    sigma_q: f64,
    constants: &CalibrationConstants,
    track: &LambdaTrack,
    width_k: f64,
) -> Result<LambdaChoice> {
    if n == 0 {
        return Err(invalid("sample size must be positive"));
    }
    if !(sigma_q >= 0.0) || !sigma_q.is_finite() {
        return Err(invalid(format!("sigma_q must be nonnegative, got {sigma_q}")));
    }
    let nf = n as f64;
    let lambda = match track {
        LambdaTrack::MeanWidth => constants.c_user * reg.eta().powi(3) * sigma_q * width_k / nf.sqrt(),
        LambdaTrack::LimitedMoment { m } => {
            if !matches!(reg, Regularizer::L1) {
                return Err(Error::Unsupported {
                    kind: reg.kind(),
                    operation: "the limited-moment lambda",
                });
            }
            if !(*m > 0.0) {
                return Err(invalid(format!("M must be positive, got {m}")));
            }
            let d = shape.dim() as f64;
            constants.c_user * sigma_q * m * (d.ln() / nf).sqrt()
        }
    };
    Ok(LambdaChoice {
        lambda,
        noise_free: sigma_q == 0.0,
        track: track.clone(),
    })
}

/// Everything needed to run and interpret one regularized fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub width_k: WidthEstimate,
    pub width_e: WidthEstimate,
    pub lambda: f64,
    pub noise_free: bool,
    pub track: LambdaTrack,
    pub r_of_rho: FixedPointMap,
    pub constants: CalibrationConstants,
    /// The regularization level replaces the quantile-defined `λ0` by its
    /// mean-width upper bound.
    pub lambda_source: String,
    pub convention: String,
}

impl CalibrationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn calibrate(
    reg: &Regularizer,
    shape: &Shape,
    n: usize,
    sigma_q: f64,
    constants: &CalibrationConstants,
    track: &LambdaTrack,
) -> Result<CalibrationResult> {
    let width_k = reg.mean_width_formula(shape)?;
    let width_e = euclidean_width(shape);
    let choice = lambda_from_width(reg, shape, n, sigma_q, constants, track, width_k.value)?;
    let r_of_rho = FixedPointMap::new(n, constants, width_k.value, width_e.value)?;
    Ok(CalibrationResult {
        width_k,
        width_e,
        lambda: choice.lambda,
        noise_free: choice.noise_free,
        track: choice.track,
        r_of_rho,
        constants: constants.clone(),
        lambda_source: "mean-width upper bound on lambda0".to_string(),
        convention: WIDTH_CONVENTION.to_string(),
    })
}

/// How `‖⟨X, t⟩‖_{L2}` is obtained.
#[derive(Clone, Copy, Debug)]
pub enum Norming<'a> {
    /// Isotropic law: the norm is `‖t‖₂`.
    Identity,
    Covariance(&'a Array2<f64>),
    /// Sample root mean square of `⟨X_i, t⟩`.
    Empirical,
}

/// Fraction of samples with `|⟨X_i, t⟩| ≥ κ ‖⟨X, t⟩‖_{L2}`, or `None` when the
/// direction has zero variance.
pub fn small_ball_frequency(x: ArrayView2<f64>, t: ArrayView1<f64>, kappa: f64, norming: Norming) -> Option<f64> {
    let proj = matvec(x, t);
    let scale = match norming {
        Norming::Identity => norm2(t),
        Norming::Covariance(sigma) => quad_form(sigma, t).max(0.0).sqrt(),
        Norming::Empirical => (proj.mapv(|v| v * v).sum() / proj.len() as f64).sqrt(),
    };
    if !(scale > 0.0) {
        return None;
    }
    let threshold = kappa * scale;
    let hits = proj.iter().filter(|v| v.abs() >= threshold).count();
    Some(hits as f64 / proj.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallBallReport {
    pub kappa: f64,
    pub eps_hat: f64,
    pub directions_tested: usize,
    /// Directions dropped because `⟨X, t⟩` had zero variance.
    pub directions_excluded: usize,
    pub min_direction: Vec<f64>,
    pub samples: usize,
}

/// Small-ball frequency minimized over the supplied directions.
pub fn small_ball_along(
    x: ArrayView2<f64>,
    directions: &[Array1<f64>],
    kappa: f64,
    norming: Norming,
) -> Result<SmallBallReport> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(invalid(format!("kappa must lie in (0, 1], got {kappa}")));
    }
    if x.nrows() < MIN_SMALL_BALL_SAMPLES {
        return Err(invalid(format!(
            "small-ball estimation needs at least {MIN_SMALL_BALL_SAMPLES} samples, got {}",
            x.nrows()
        )));
    }
    if directions.is_empty() {
        return Err(invalid("at least one direction is required"));
    }
    let mut best: Option<(f64, &Array1<f64>)> = None;
    let mut excluded = 0;
    for t in directions {
        if t.len() != x.ncols() {
            return Err(mismatch(format!("direction has length {}, design has {} columns", t.len(), x.ncols())));
        }
        match small_ball_frequency(x, t.view(), kappa, norming) {
            Some(freq) if best.is_none_or(|(b, _)| freq < b) => best = Some((freq, t)),
            Some(_) => {}
            None => excluded += 1,
        }
    }
    let Some((eps_hat, dir)) = best else {
        return Err(invalid("every direction is degenerate"));
    };
    Ok(SmallBallReport {
        kappa,
        eps_hat,
        directions_tested: directions.len() - excluded,
        directions_excluded: excluded,
        min_direction: dir.to_vec(),
        samples: x.nrows(),
    })
}

/// Directions drawn uniformly from the unit sphere.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Array1<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SMALL_BALL_DIRECTION_STREAM);
    (0..count)
        .map(|_| loop {
            let g: Array1<f64> = Array1::from_shape_simple_fn(dim, || StandardNormal.sample(&mut rng));
            let n = norm2(g.view());
            if n > 0.0 {
                break g / n;
            }
        })
        .collect()
}

/// `n` design vectors drawn from the design stream of `seed`, one per row.
pub fn design_samples(design: &DesignSpec, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SMALL_BALL_DESIGN_STREAM);
    design.sample(n, &mut rng)
}

/// Draws `samples` design vectors from `design` and tests random directions.
pub fn estimate_small_ball(
    design: &DesignSpec,
    kappa: f64,
    directions: usize,
    samples: usize,
    seed: u64,
) -> Result<SmallBallReport> {
    design.validate()?;
    let x = design_samples(design, samples, seed);
    let dirs = random_directions(design.shape.dim(), directions, seed);
    match design.covariance() {
        Some(sigma) => small_ball_along(x.view(), &dirs, kappa, Norming::Covariance(&sigma)),
        None => small_ball_along(x.view(), &dirs, kappa, Norming::Identity),
    }
}

/// [`estimate_small_ball`] for an observed sample matrix, normed empirically.
pub fn estimate_small_ball_from_samples(
    x: ArrayView2<f64>,
    kappa: f64,
    directions: usize,
    seed: u64,
) -> Result<SmallBallReport> {
    let dirs = random_directions(x.ncols(), directions, seed);
    small_ball_along(x, &dirs, kappa, Norming::Empirical)
}

/// Default moment cap `a log d`, never below 2.
pub fn default_p0(d: usize, a: f64) -> f64 {
    (a * (d.max(1) as f64).ln()).max(2.0)
}

/// `MOMENT_GRID_POINTS` geometrically spaced exponents from 2 to `p0`.
pub fn moment_grid(p0: f64) -> Vec<f64> {
    if p0 <= 2.0 {
        return vec![2.0];
    }
    let k = MOMENT_GRID_POINTS - 1;
    (0..=k)
        .map(|i| if i == k { p0 } else { 2.0 * (p0 / 2.0).powf(i as f64 / k as f64) })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentGrowthReport {
    pub p0: f64,
    pub grid: Vec<f64>,
    /// `sup_p ‖x_j‖_p/(√p ‖x_j‖₂)` over the grid, per coordinate.
    pub per_coordinate_ratio: Vec<f64>,
    /// Hill estimate of the tail index of `|x_j|`, per coordinate.
    pub tail_index: Vec<f64>,
    pub kappa0_hat: f64,
    #[serde(rename = "M")]
    pub m: f64,
    /// `N < 10 e^{p0}`: the highest empirical moments are noisy.
    pub unreliable: bool,
    pub violated_coordinates: Vec<usize>,
    pub violated: bool,
}

/// Empirical `(E|z|^p)^{1/p}`.
fn empirical_lp(z: ArrayView1<f64>, p: f64) -> f64 {
    let scale = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let mean = z.iter().map(|v| (v.abs() / scale).powf(p)).sum::<f64>() / z.len() as f64;
    scale * mean.powf(1.0 / p)
}

/// Hill estimator on the top `⌊√N⌋` order statistics of `|z|`; infinite when
/// those statistics are all equal.
pub fn hill_tail_index(z: ArrayView1<f64>) -> f64 {
    let mut mags: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let k = ((mags.len() as f64).sqrt() as usize).clamp(1, mags.len().saturating_sub(1).max(1));
    let base = mags.get(k).copied().unwrap_or(0.0);
    if base <= 0.0 {
        return f64::INFINITY;
    }
    let mean_log = mags[..k].iter().map(|m| (m / base).ln()).sum::<f64>() / k as f64;
    if mean_log > 0.0 {
        1.0 / mean_log
    } else {
        f64::INFINITY
    }
}

/// Local subgaussian growth of each coordinate up to moment `p0`.
///
/// A coordinate is marked as violating when its estimated tail index is
/// below `p0` and its normalized moment ratio grows from `p = 2` to `p0`.
pub fn moment_growth_diagnostic(samples: ArrayView2<f64>, p0: f64) -> Result<MomentGrowthReport> {
    if !(p0 >= 2.0) || !p0.is_finite() {
        return Err(invalid(format!("p0 must be at least 2, got {p0}")));
    }
    let n = samples.nrows();
    if n < 2 || samples.ncols() == 0 {
        return Err(invalid("moment diagnostic needs at least two samples and one coordinate"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sample matrix".to_string()));
    }
    let grid = moment_grid(p0);
    let mut ratios = Vec::with_capacity(samples.ncols());
    let mut tails = Vec::with_capacity(samples.ncols());
    let mut violated_coordinates = Vec::new();
    let mut m = 0.0_f64;
    for (j, col) in samples.axis_iter(Axis(1)).enumerate() {
        let l2 = empirical_lp(col, 2.0);
        m = m.max(l2);
        tails.push(hill_tail_index(col));
        if l2 == 0.0 {
            ratios.push(0.0);
            continue;
        }
        let curve: Vec<f64> = grid.iter().map(|&p| empirical_lp(col, p) / (p.sqrt() * l2)).collect();
        ratios.push(curve.iter().copied().fold(0.0, f64::max));
        let grows = curve.last().copied().unwrap_or(0.0) > curve[0];
        if tails[j] < p0 && grows {
            violated_coordinates.push(j);
        }
    }
    if !(m > 0.0) {
        return Err(invalid("every coordinate is identically zero"));
    }
    Ok(MomentGrowthReport {
        p0,
        kappa0_hat: ratios.iter().copied().fold(0.0, f64::max),
        per_coordinate_ratio: ratios,
        tail_index: tails,
        grid,
        m,
        unreliable: (n as f64) < 10.0 * p0.exp(),
        violated: !violated_coordinates.is_empty(),
        violated_coordinates,
    })
}

/// The three empirical processes of the excess squared loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessLoss {
    /// `(1/N) Σ ⟨X_i, t − t*⟩²`.
    pub pn_q: f64,
    /// `(1/N) Σ ξ_i ⟨X_i, t − t*⟩` with `ξ_i = Y_i − ⟨X_i, t*⟩`.
    pub pn_m: f64,
    /// `pn_q − 2 pn_m`.
    pub pn_l: f64,
}

pub fn excess_loss_decomposition(
    instance: &ProblemInstance,
    t: ArrayView1<f64>,
    t_star: ArrayView1<f64>,
) -> Result<ExcessLoss> {
    let d = instance.dim();
    if t.len() != d || t_star.len() != d {
        return Err(mismatch(format!(
            "expected vectors of length {d}, got {} and {}",
            t.len(),
            t_star.len()
        )));
    }
    let diff = &t - &t_star;
    let fitted_diff = matvec(instance.x.view(), diff.view());
    let xi = &instance.y - &matvec(instance.x.view(), t_star);
    let n = instance.n() as f64;
    let pn_q = fitted_diff.mapv(|v| v * v).sum() / n;
    let pn_m = xi.dot(&fitted_diff) / n;
    Ok(ExcessLoss { pn_q, pn_m, pn_l: pn_q - 2.0 * pn_m })
}

/// One row of a width table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthRow {
    pub kind: String,
    pub dimension: usize,
    pub formula: Option<f64>,
    pub mc_estimate: f64,
    pub stderr: f64,
}

/// Closed form and Monte Carlo width side by side for each regularizer.
pub fn width_table(entries: &[(Regularizer, Shape)], samples: usize, seed: u64) -> Result<Vec<WidthRow>> {
    entries
        .iter()
        .map(|(reg, shape)| {
            let mc = estimate_mean_width_mc(reg, shape, samples, seed)?;
            let formula = reg.mean_width_formula(shape).ok().filter(|w| w.stderr().is_none());
            Ok(WidthRow {
                kind: reg.kind().to_string(),
                dimension: shape.dim(),
                formula: formula.map(|w| w.value),
                mc_estimate: mc.value,
                stderr: mc.stderr().unwrap_or(0.0),
            })
        })
        .collect()
}

pub fn write_width_csv<W: Write>(writer: W, rows: &[WidthRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
