//! Theoretical error rates for benchmarking measured estimation errors.
//!
//! All rates are reported with absolute constants set to one.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::Shape;
use crate::regularizers::{Regularizer, WidthMethod, WIDTH_CONVENTION};

/// Relative half-width of the `N ∼ d` band in the minimax ℓ1 rate: the band is `[d/2, 2d]`.
pub const IMPRECISE_BAND_FACTOR: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub value: f64,
    pub regime: String,
    pub formula_id: String,
    pub convention: String,
}

impl RateEstimate {
    fn new(value: f64, regime: &str, formula_id: impl Into<String>) -> Self {
        RateEstimate {
            value,
            regime: regime.to_string(),
            formula_id: formula_id.into(),
            convention: WIDTH_CONVENTION.to_string(),
        }
    }
}

fn check_common(rho: f64, sigma: f64, n: usize) -> Result<()> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(invalid(format!("rho must be nonnegative, got {rho}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("sigma must be nonnegative, got {sigma}")));
    }
    if n == 0 {
        return Err(invalid("sample size must be positive"));
    }
    Ok(())
}

/// Minimax rate over `ρ B₁^d` for the Gaussian linear model with noise level `σ`.
///
/// Below `ρ = σ √(log d / N)` the rate is `ρ²`. Above it the rate is
/// `max{s_M², s_Q²}`, where `s_M²` has a parametric, a logarithmic and a
/// small-radius branch, and `s_Q² = (ρ²/N) log(d/N)` for `N ≤ d/2`, zero for
/// `N ≥ 2d`. Inside `(d/2, 2d)` the larger of the two adjacent `s_Q²`
/// branches is used and the regime is `imprecise-band`. The value never
/// exceeds `ρ²`, the error of the zero estimator.
pub fn minimax_rate_l1(rho: f64, sigma: f64, n: usize, d: usize) -> Result<RateEstimate> {
    check_common(rho, sigma, n)?;
    if d < 2 {
        return Err(invalid(format!("dimension must be at least 2, got {d}")));
    }
    let (nf, df) = (n as f64, d as f64);
    let log_d = df.ln();
    let rho_sq_n = rho * rho * nf;
    if rho_sq_n <= sigma * sigma * log_d {
        return Ok(RateEstimate::new(rho * rho, "degenerate-small-rho", "rho^2"));
    }
    let (s_m, m_branch, m_formula) = if rho_sq_n >= sigma * sigma * df * df {
        (sigma * sigma * df / nf, "sM-parametric", "sigma^2 d/N")
    } else {
        let log_term = (std::f64::consts::E * sigma * df / (rho * nf.sqrt())).ln();
        (
            rho * sigma * (log_term / nf).sqrt(),
            "sM-logarithmic",
            "rho sigma sqrt(log(e sigma d/(rho sqrt N))/N)",
        )
    };
    let quadratic_branch = rho * rho / nf * (df / nf).ln().max(0.0);
    let in_band = nf > df / IMPRECISE_BAND_FACTOR && nf < df * IMPRECISE_BAND_FACTOR;
    let s_q = if nf >= df * IMPRECISE_BAND_FACTOR { 0.0 } else { quadratic_branch };
    let (value, regime, formula) = if s_q > s_m {
        (s_q, "sQ-dominated", "rho^2/N log(d/N)")
    } else {
        (s_m, m_branch, m_formula)
    };
    let regime = if in_band { "imprecise-band" } else { regime };
    Ok(RateEstimate::new(
        value.min(rho * rho),
        regime,
        format!("minimax-l1: max(sM^2, sQ^2), active {formula}"),
    ))
}

/// Inputs of a complexity-dependent rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateQuery {
    pub reg: Regularizer,
    pub shape: Shape,
    pub n: usize,
    /// Noise level `σ_q`.
    pub sigma: f64,
    /// `Ψ(t*)`.
    pub rho: f64,
    /// `‖t*‖₀`, used by combined rates.
    #[serde(default)]
    pub s: Option<usize>,
    /// Largest coordinate `L2` norm of the design; scales the width.
    #[serde(default, rename = "M")]
    pub m: Option<f64>,
    /// Width of the unit ball overriding the closed form.
    #[serde(default)]
    pub width: Option<f64>,
}

impl RateQuery {
    pub fn new(reg: Regularizer, shape: Shape, n: usize, sigma: f64, rho: f64) -> Self {
        RateQuery { reg, shape, n, sigma, rho, s: None, m: None, width: None }
    }

    pub fn validate(&self) -> Result<()> {
        check_common(self.rho, self.sigma, self.n)?;
        self.reg.check_dim(self.shape.dim())?;
        if let Some(s) = self.s {
            if s == 0 || s > self.shape.dim() {
                return Err(invalid(format!("sparsity must lie in 1..={}, got {s}", self.shape.dim())));
            }
        }
        if let Some(m) = self.m {
            if !(m > 0.0) || !m.is_finite() {
                return Err(invalid(format!("M must be positive, got {m}")));
            }
        }
        if let Some(w) = self.width {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(invalid(format!("width must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

/// `max{σ Λ(ρ), Λ(ρ)²}` with `Λ(ρ) = ρ ℓ*(K)/√N`, reduced to `σ Λ(ρ)` once
/// `N ≥ D`, the squared width of the Euclidean ball.
pub fn complexity_rate(query: &RateQuery) -> Result<RateEstimate> {
    query.validate()?;
    let (width, width_formula) = match query.width {
        Some(w) => (w, "supplied width".to_string()),
        None => {
            let est = query.reg.mean_width_formula(&query.shape)?;
            let formula = match &est.method {
                WidthMethod::ClosedForm { formula } => formula.clone(),
                WidthMethod::MonteCarlo { .. } => "monte carlo width".to_string(),
            };
            (est.value, formula)
        }
    };
    let width = width * query.m.unwrap_or(1.0);
    let nf = query.n as f64;
    let lambda = query.rho * width / nf.sqrt();
    let formula_id = format!(
        "{}: max(sigma Lambda, Lambda^2), Lambda = rho [{}]/sqrt(N)",
        query.reg.kind(),
        width_formula
    );
    if lambda == 0.0 {
        return Ok(RateEstimate::new(0.0, "trivial", formula_id));
    }
    let linear = query.sigma * lambda;
    let quadratic = lambda * lambda;
    let estimate = if nf >= query.shape.dim() as f64 {
        RateEstimate::new(linear, "large-sample", formula_id)
    } else if quadratic > linear {
        RateEstimate::new(quadratic, "quadratic-dominated", formula_id)
    } else {
        RateEstimate::new(linear, "linear-dominated", formula_id)
    };
    Ok(estimate)
}

/// `min{ sσ² log d / N, max{σρ√(log d/N), ρ² log d/N} }` for the LASSO with
/// the universal parameter, valid when `N ≥ s log(d/s)`; below that sample
/// size only the complexity term is returned.
pub fn combined_rate(s: usize, rho: f64, sigma: f64, n: usize, d: usize) -> Result<RateEstimate> {
    check_common(rho, sigma, n)?;
    if d < 2 {
        return Err(invalid(format!("dimension must be at least 2, got {d}")));
    }
    if s == 0 || s > d {
        return Err(invalid(format!("sparsity must lie in 1..={d}, got {s}")));
    }
    let (nf, df, sf) = (n as f64, d as f64, s as f64);
    let log_ratio = df.ln() / nf;
    let complexity = (sigma * rho * log_ratio.sqrt()).max(rho * rho * log_ratio);
    let formula = "min(s sigma^2 log d/N, max(sigma rho sqrt(log d/N), rho^2 log d/N))";
    if nf < sf * (df / sf).ln() {
        return Ok(RateEstimate::new(complexity, "sparsity-inapplicable", formula));
    }
    let sparsity = sf * sigma * sigma * log_ratio;
    let deteriorated = sigma * (nf / df.ln()).sqrt() <= rho && rho <= sigma * sf.sqrt();
    let estimate = if sparsity < complexity {
        RateEstimate::new(sparsity, "sparsity-dominated", formula)
    } else if deteriorated {
        RateEstimate::new(complexity, "deterioration-band", formula)
    } else {
        RateEstimate::new(complexity, "complexity-dominated", formula)
    };
    Ok(estimate)
}

/// One row of a rate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub kind: String,
    pub dimension: usize,
    pub n: usize,
    pub sigma: f64,
    pub rho: f64,
    pub s: Option<usize>,
    pub value: f64,
    pub regime: String,
    pub formula_id: String,
}

impl RateRow {
    pub fn from_query(query: &RateQuery, estimate: &RateEstimate) -> Self {
        RateRow {
            kind: query.reg.kind().to_string(),
            dimension: query.shape.dim(),
            n: query.n,
            sigma: query.sigma,
            rho: query.rho,
            s: query.s,
            value: estimate.value,
            regime: estimate.regime.clone(),
            formula_id: estimate.formula_id.clone(),
        }
    }
}

pub fn write_rate_csv<W: Write>(writer: W, rows: &[RateRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}
