//! Report files for a finished sweep.
//!
//! `cells.csv` columns: `cell, n, dimension, rho, lambda_index, lambda,
//! trials, failed, median, q1, q3, rate, regime, ratio`. `summary.json`
//! holds the fitted slopes and the spread of `ratio` per curve. Each curve
//! is also written to `curves/*.dat` as whitespace-separated `x median`
//! pairs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rerm::rates::{complexity_rate, RateEstimate, RateQuery};
use rerm::regularizers::WIDTH_CONVENTION;
use serde::{Deserialize, Serialize};

use crate::config::{LambdaPolicy, NoiseLevel, SweepConfig};
use crate::fit::{fit_log_points, quantile, ScalingFit};
use crate::sweep::SweepRecord;
use crate::ConfigError;

/// Theoretical rate attached to a `(N, dimension, rho)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRate {
    pub n: usize,
    pub dimension: usize,
    pub rho: f64,
    pub rate: RateEstimate,
}

/// Complexity rates for every grid point of `config`.
pub fn cell_rates(config: &SweepConfig) -> Result<Vec<CellRate>, ConfigError> {
    let noise = config.noise.spec()?;
    let sigma = match &config.lambda_policy {
        LambdaPolicy::Calibrated { noise_level: NoiseLevel::Scale, .. } => noise.scale,
        _ => noise.sigma_q,
    };
    let mut out = Vec::new();
    for &dimension in &config.grid.dimension {
        let (reg, shape) = config.regularizer.instantiate(dimension)?;
        for &rho in &config.grid.rho {
            for &n in &config.grid.n {
                let rate = complexity_rate(&RateQuery::new(reg.clone(), shape, n, sigma, rho))?;
                out.push(CellRate { n, dimension, rho, rate });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub n: usize,
    pub dimension: usize,
    pub rho: f64,
    pub lambda_index: usize,
    pub lambda: f64,
    pub trials: usize,
    pub failed: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub rate: Option<f64>,
    pub regime: Option<String>,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    /// Identifies the curve, also the stem of its `.dat` file.
    pub curve: String,
    pub fit: Option<ScalingFit>,
    /// `max ratio / min ratio` along the curve.
    pub ratio_spread: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub convention: String,
    pub cells: usize,
    pub records: usize,
    pub failed_records: usize,
    pub slopes_vs_n: Vec<CurveFit>,
    pub slopes_vs_rho: Vec<CurveFit>,
}

pub fn summarize_cells(records: &[SweepRecord], rates: &[CellRate]) -> Vec<CellSummary> {
    let rate_of = |n: usize, dimension: usize, rho: f64| {
        rates.iter().find(|r| r.n == n && r.dimension == dimension && r.rho == rho).map(|r| &r.rate)
    };
    let mut by_cell: BTreeMap<usize, Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        by_cell.entry(r.cell).or_default().push(r);
    }
    by_cell
        .into_iter()
        .map(|(cell, group)| {
            let first = group[0];
            let mut errors: Vec<f64> = group.iter().filter(|r| r.succeeded()).map(|r| r.error).collect();
            let (median, q1, q3) = if errors.is_empty() {
                (None, None, None)
            } else {
                (
                    Some(quantile(&mut errors, 0.5)),
                    Some(quantile(&mut errors, 0.25)),
                    Some(quantile(&mut errors, 0.75)),
                )
            };
            let mut lambdas: Vec<f64> = group.iter().map(|r| r.lambda).filter(|l| l.is_finite()).collect();
            let rate = rate_of(first.n, first.dimension, first.rho);
            let ratio = match (median, rate) {
                (Some(m), Some(r)) if r.value > 0.0 => Some(m / r.value),
                _ => None,
            };
            CellSummary {
                cell,
                n: first.n,
                dimension: first.dimension,
                rho: first.rho,
                lambda_index: first.lambda_index,
                lambda: if lambdas.is_empty() { f64::NAN } else { quantile(&mut lambdas, 0.5) },
                trials: group.len(),
                failed: group.iter().filter(|r| !r.succeeded()).count(),
                median,
                q1,
                q3,
                rate: rate.map(|r| r.value),
                regime: rate.map(|r| r.regime.clone()),
                ratio,
            }
        })
        .collect()
}

struct Curve {
    name: String,
    points: Vec<(f64, f64, Option<f64>)>,
}

fn curves(cells: &[CellSummary], along_n: bool) -> Vec<Curve> {
    let mut groups: BTreeMap<(usize, u64, usize), Vec<&CellSummary>> = BTreeMap::new();
    for c in cells {
        let key = if along_n { (c.dimension, c.rho.to_bits(), c.lambda_index) } else { (c.dimension, c.n as u64, c.lambda_index) };
        groups.entry(key).or_default().push(c);
    }
    groups
        .into_values()
        .map(|group| {
            let c = group[0];
            let name = if along_n {
                format!("error_vs_n_d{}_rho{}_l{}", c.dimension, c.rho, c.lambda_index)
            } else {
                format!("error_vs_rho_d{}_n{}_l{}", c.dimension, c.n, c.lambda_index)
            };
            let mut points: Vec<(f64, f64, Option<f64>)> = group
                .iter()
                .filter_map(|c| c.median.map(|m| (if along_n { c.n as f64 } else { c.rho }, m, c.ratio)))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Curve { name, points }
        })
        .collect()
}

fn fit_curve(curve: &Curve) -> CurveFit {
    let logs: Vec<(f64, f64)> =
        curve.points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    let dropped = curve.points.iter().filter(|p| p.0 > 0.0 && p.1 <= 0.0).count();
    let ratios: Vec<f64> = curve.points.iter().filter_map(|p| p.2).collect();
    let ratio_spread = (!ratios.is_empty()).then(|| {
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0_f64), |(l, h), &r| (l.min(r), h.max(r)));
        hi / lo
    });
    CurveFit { curve: curve.name.clone(), fit: fit_log_points(&logs, dropped).ok(), ratio_spread }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot write report to {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Files staged in a scratch directory and moved into place only once
/// every one of them is complete.
struct Staging {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Staging {
    fn new(out: &Path) -> Result<Self, ReportError> {
        let dir = out.join(format!(".staging-{}", std::process::id()));
        fs::create_dir_all(dir.join("curves")).map_err(io_at(&dir))?;
        Ok(Staging { dir, files: Vec::new() })
    }

    fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<(), ReportError> {
        let path = self.dir.join(relative);
        fs::write(&path, bytes).map_err(io_at(&path))?;
        self.files.push(PathBuf::from(relative));
        Ok(())
    }

    fn commit(self, out: &Path) -> Result<Vec<PathBuf>, ReportError> {
        fs::create_dir_all(out.join("curves")).map_err(io_at(out))?;
        let mut placed = Vec::new();
        for rel in &self.files {
            let target = out.join(rel);
            fs::rename(self.dir.join(rel), &target).map_err(io_at(&target))?;
            placed.push(target);
        }
        Ok(placed)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

/// Writes `cells.csv`, `summary.json` and one `.dat` file per curve into
/// `out`, returning the summary and the written paths.
pub fn emit_report(
    records: &[SweepRecord],
    rates: &[CellRate],
    out: &Path,
) -> Result<(ReportSummary, Vec<PathBuf>), ReportError> {
    let cells = summarize_cells(records, rates);
    let mut staging = Staging::new(out)?;

    let mut csv = csv::Writer::from_writer(Vec::new());
    if cells.is_empty() {
        csv.write_record(CELL_COLUMNS)?;
    }
    for c in &cells {
        csv.serialize(c)?;
    }
    let bytes = csv.into_inner().map_err(|e| e.into_error()).map_err(io_at(out))?;
    staging.write("cells.csv", &bytes)?;

    let mut fits = [Vec::new(), Vec::new()];
    for (slot, along_n) in [(0, true), (1, false)] {
        for curve in curves(&cells, along_n) {
            let mut text = Vec::new();
            for (x, m, _) in &curve.points {
                writeln!(text, "{x} {m}").map_err(io_at(out))?;
            }
            staging.write(&format!("curves/{}.dat", curve.name), &text)?;
            fits[slot].push(fit_curve(&curve));
        }
    }
    let [slopes_vs_n, slopes_vs_rho] = fits;
    let summary = ReportSummary {
        convention: WIDTH_CONVENTION.to_string(),
        cells: cells.len(),
        records: records.len(),
        failed_records: records.iter().filter(|r| !r.succeeded()).count(),
        slopes_vs_n,
        slopes_vs_rho,
    };
    staging.write("summary.json", serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let paths = staging.commit(out)?;
    Ok((summary, paths))
}

/// CSV header of [`CellSummary`].
pub const CELL_COLUMNS: [&str; 14] = [
    "cell",
    "n",
    "dimension",
    "rho",
    "lambda_index",
    "lambda",
    "trials",
    "failed",
    "median",
    "q1",
    "q3",
    "rate",
    "regime",
    "ratio",
];
