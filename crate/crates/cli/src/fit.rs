//! Log-log regression of per-cell median errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sweep::SweepRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XAxis {
    N,
    Rho,
}

impl XAxis {
    pub fn value(self, record: &SweepRecord) -> f64 {
        match self {
            XAxis::N => record.n as f64,
            XAxis::Rho => record.rho,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// `None` with exactly two points.
    pub stderr: Option<f64>,
    pub n_points: usize,
    /// Abscissae dropped because their median error was zero.
    pub zero_filtered: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least two distinct abscissae with positive median error, got {points} ({zero_filtered} dropped as zero)")]
    TooFewPoints { points: usize, zero_filtered: usize },
}

/// Median with the midpoint rule for even counts; `values` must be nonempty.
pub fn median(values: &mut [f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linearly interpolated sample quantile; `values` must be nonempty.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
}

/// Ordinary least squares of `log median(error)` on `log x`.
///
/// Records are grouped by their abscissa after applying `filter`; failed
/// trials and positive abscissae only are used.
pub fn fit_scaling_exponent(
    records: &[SweepRecord],
    axis: XAxis,
    filter: impl Fn(&SweepRecord) -> bool,
) -> Result<ScalingFit, FitError> {
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.succeeded() && r.error.is_finite() && filter(r)) {
        let x = axis.value(r);
        if x > 0.0 {
            groups.entry(x.to_bits()).or_insert_with(|| (x, Vec::new())).1.push(r.error);
        }
    }
    let mut points = Vec::new();
    let mut zero_filtered = 0;
    for (_, (x, mut errors)) in groups {
        let m = median(&mut errors);
        if m > 0.0 {
            points.push((x.ln(), m.ln()));
        } else {
            zero_filtered += 1;
        }
    }
    fit_log_points(&points, zero_filtered)
}

/// OLS on points already in log coordinates.
pub fn fit_log_points(points: &[(f64, f64)], zero_filtered: usize) -> Result<ScalingFit, FitError> {
    let n = points.len();
    if n < 2 {
        return Err(FitError::TooFewPoints { points: n, zero_filtered });
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = (n > 2).then(|| {
        let ssr: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (ssr / (nf - 2.0) / sxx).sqrt()
    });
    Ok(ScalingFit { slope, intercept, stderr, n_points: n, zero_filtered })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let mut v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&mut v), 2.5);
        assert_eq!(quantile(&mut v, 0.25), 1.75);
        assert_eq!(quantile(&mut v, 1.0), 4.0);
        assert_eq!(median(&mut [5.0]), 5.0);
    }

    #[test]
    fn stderr_reflects_scatter() {
        let fit = fit_log_points(&[(0.0, 0.0), (1.0, 1.1), (2.0, 1.9), (3.0, 3.05)], 0).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.05);
        assert!(fit.stderr.unwrap() > 0.0);
        assert!(fit_log_points(&[(1.0, 1.0)], 2).is_err());
    }
}
