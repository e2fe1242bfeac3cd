//! Execution of a sweep: one record per (cell, trial), in canonical order.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use rerm::calibration::{lambda_from_width, CalibrationConstants, LambdaTrack};
use rerm::model::{generate_dataset, population_error, DesignSpec, ProblemInstance, Shape, TargetSpec};
use rerm::regularizers::Regularizer;
use rerm::solver::{rerm_objective, solve_constrained, solve_rerm, Status};
use serde::{Deserialize, Serialize};

use crate::config::{Estimator, LambdaPolicy, NoiseLevel, SweepConfig, Track};
use crate::ConfigError;

/// One point of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub dimension: usize,
    pub rho: f64,
    pub lambda_index: usize,
    /// `None` when λ is calibrated per cell.
    pub lambda: Option<f64>,
}

/// Cells ordered by dimension, then `rho`, then `N`, then λ.
pub fn cells(config: &SweepConfig) -> Vec<Cell> {
    let lambdas = config.lambdas();
    let mut out = Vec::new();
    for &dimension in &config.grid.dimension {
        for &rho in &config.grid.rho {
            for &n in &config.grid.n {
                for (lambda_index, &lambda) in lambdas.iter().enumerate() {
                    out.push(Cell { index: out.len(), n, dimension, rho, lambda_index, lambda });
                }
            }
        }
    }
    out
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial` in cell `cell`.
pub fn trial_seed(master: u64, cell: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(cell as u64)) ^ trial as u64)
}

/// Seed for the random parts of a cell's target.
pub fn cell_seed(master: u64, cell: usize) -> u64 {
    trial_seed(master, cell, usize::MAX)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordStatus {
    Converged,
    IterationCap,
    Failed,
}

/// One trial of one cell. Column order of the CSV output follows field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub cell: usize,
    pub trial: usize,
    pub n: usize,
    pub dimension: usize,
    pub rho: f64,
    pub lambda_index: usize,
    pub lambda: f64,
    pub seed: u64,
    /// `E⟨X, t̂ − t*⟩²`.
    pub error: f64,
    pub psi_of_t_star: f64,
    /// Penalized empirical objective at `t̂` and at `t*` (plain loss for constrained fits).
    pub objective_hat: f64,
    pub objective_star: f64,
    pub status: RecordStatus,
    pub iterations: usize,
    pub message: String,
    /// Excluded from determinism guarantees.
    pub wall_time_ms: f64,
}

impl SweepRecord {
    pub fn succeeded(&self) -> bool {
        self.status != RecordStatus::Failed
    }
}

/// Largest coordinate `L2` norm of the design.
fn coordinate_scale(design: &DesignSpec) -> f64 {
    match design.covariance() {
        Some(sigma) => sigma.diag().iter().fold(0.0_f64, |m, v| m.max(v.sqrt())),
        None => 1.0,
    }
}

/// λ for a cell: the fixed value, or the calibrated level for its `N` and `d`.
pub fn cell_lambda(config: &SweepConfig, cell: &Cell, reg: &Regularizer, design: &DesignSpec) -> Result<f64, ConfigError> {
    if let Some(lambda) = cell.lambda {
        return Ok(lambda);
    }
    let LambdaPolicy::Calibrated { track, noise_level, c_user } = &config.lambda_policy else {
        unreachable!("non-calibrated policies carry their lambda in the cell");
    };
    let noise = config.noise.spec()?;
    let sigma = match noise_level {
        NoiseLevel::SigmaQ => noise.sigma_q,
        NoiseLevel::Scale => noise.scale,
    };
    let constants = CalibrationConstants::new(1.0, 1.0, reg.eta(), sigma, *c_user)?;
    let track = match track {
        Track::MeanWidth => LambdaTrack::MeanWidth,
        Track::LimitedMoment => LambdaTrack::LimitedMoment { m: coordinate_scale(design) },
    };
    let width = reg.mean_width_formula(&design.shape)?.value;
    Ok(lambda_from_width(reg, &design.shape, cell.n, sigma, &constants, &track, width)?.lambda)
}

struct Prepared {
    reg: Regularizer,
    design: DesignSpec,
    target: TargetSpec,
    lambda: f64,
}

fn prepare(config: &SweepConfig, cell: &Cell) -> Result<Prepared, ConfigError> {
    let (reg, shape): (Regularizer, Shape) = config.regularizer.instantiate(cell.dimension)?;
    let design = DesignSpec::new(config.design.clone(), shape)?;
    let target = config.target.build(&reg, shape, cell.rho, cell_seed(config.master_seed, cell.index))?;
    let lambda = match config.estimator {
        Estimator::Rerm => cell_lambda(config, cell, &reg, &design)?,
        Estimator::Constrained => 0.0,
    };
    Ok(Prepared { reg, design, target, lambda })
}

fn solve_trial(config: &SweepConfig, prepared: &Prepared, instance: &ProblemInstance) -> rerm::Result<(f64, f64, f64, Status, usize)> {
    let Prepared { reg, design, lambda, .. } = prepared;
    let (solution, objective_lambda) = match config.estimator {
        Estimator::Rerm => (solve_rerm(instance, reg, *lambda, &config.solver)?, *lambda),
        Estimator::Constrained => {
            let radius = reg.value(instance.t_star())?;
            (solve_constrained(instance, reg, radius, &config.solver)?, 0.0)
        }
    };
    let error = population_error(solution.t_hat.view(), instance.t_star(), design)?;
    let hat = rerm_objective(instance, reg, objective_lambda, solution.t_hat.view())?;
    let star = rerm_objective(instance, reg, objective_lambda, instance.t_star())?;
    Ok((error, hat, star, solution.status, solution.iterations))
}

fn run_trial(config: &SweepConfig, cell: &Cell, prepared: &Result<Prepared, String>, trial: usize) -> SweepRecord {
    let start = Instant::now();
    let seed = trial_seed(config.master_seed, cell.index, trial);
    let mut record = SweepRecord {
        cell: cell.index,
        trial,
        n: cell.n,
        dimension: cell.dimension,
        rho: cell.rho,
        lambda_index: cell.lambda_index,
        lambda: f64::NAN,
        seed,
        error: f64::NAN,
        psi_of_t_star: f64::NAN,
        objective_hat: f64::NAN,
        objective_star: f64::NAN,
        status: RecordStatus::Failed,
        iterations: 0,
        message: String::new(),
        wall_time_ms: 0.0,
    };
    let outcome = prepared.as_ref().map_err(Clone::clone).and_then(|p| {
        record.lambda = p.lambda;
        record.psi_of_t_star = p.reg.value(p.target.t_star()).map_err(|e| e.to_string())?;
        let noise = config.noise.spec().map_err(|e| e.to_string())?;
        let instance = generate_dataset(&p.design, &p.target, &noise, cell.n, seed).map_err(|e| e.to_string())?;
        solve_trial(config, p, &instance).map_err(|e| e.to_string())
    });
    match outcome {
        Ok((error, hat, star, status, iterations)) => {
            record.error = error;
            record.objective_hat = hat;
            record.objective_star = star;
            record.iterations = iterations;
            record.status = match status {
                Status::Converged => RecordStatus::Converged,
                Status::IterationCap => RecordStatus::IterationCap,
            };
        }
        Err(message) => record.message = message,
    }
    record.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    record
}

/// Runs every trial and hands records to `sink` in canonical order as soon
/// as all earlier records are done. Failed solves become records with status
/// `failed`; only an error returned by `sink` aborts the sweep.
pub fn run_sweep_with<E>(
    config: &SweepConfig,
    mut sink: impl FnMut(&SweepRecord) -> Result<(), E>,
) -> Result<Vec<SweepRecord>, E> {
    let cells = cells(config);
    let prepared: Vec<Result<Prepared, String>> =
        cells.iter().map(|c| prepare(config, c).map_err(|e| e.to_string())).collect();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.trials_per_cell).map(move |t| (c, t)))
        .collect();
    let total = tasks.len();
    let (tx, rx) = mpsc::channel::<(usize, SweepRecord)>();
    let mut out = Vec::with_capacity(total);
    let mut failure = None;
    std::thread::scope(|scope| {
        scope.spawn(|| {
            tasks.par_iter().enumerate().for_each_with(tx, |tx, (k, &(c, t))| {
                // the receiver outlives every sender
                let _ = tx.send((k, run_trial(config, &cells[c], &prepared[c], t)));
            });
        });
        let mut pending = BTreeMap::new();
        for (k, record) in rx {
            pending.insert(k, record);
            while let Some(record) = pending.remove(&out.len()) {
                if failure.is_none() {
                    if let Err(e) = sink(&record) {
                        failure = Some(e);
                    }
                }
                out.push(record);
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

pub fn run_sweep(config: &SweepConfig) -> Vec<SweepRecord> {
    run_sweep_with(config, |_| Ok::<(), std::convert::Infallible>(())).unwrap_or_else(|never| match never {})
}

/// Runs the sweep and streams records to `writer` as CSV.
pub fn run_sweep_to_csv<W: Write>(config: &SweepConfig, writer: W) -> Result<Vec<SweepRecord>, csv::Error> {
    let mut csv = csv::Writer::from_writer(writer);
    let records = run_sweep_with(config, |r| {
        csv.serialize(r)?;
        csv.flush().map_err(csv::Error::from)
    })?;
    if records.is_empty() {
        csv.write_record(RECORD_COLUMNS)?;
    }
    csv.flush()?;
    Ok(records)
}

/// CSV header of [`SweepRecord`].
pub const RECORD_COLUMNS: [&str; 16] = [
    "cell",
    "trial",
    "n",
    "dimension",
    "rho",
    "lambda_index",
    "lambda",
    "seed",
    "error",
    "psi_of_t_star",
    "objective_hat",
    "objective_star",
    "status",
    "iterations",
    "message",
    "wall_time_ms",
];

pub fn read_records<R: std::io::Read>(reader: R) -> Result<Vec<SweepRecord>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}
