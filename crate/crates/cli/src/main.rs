use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rerm::rates::write_rate_csv;
use rerm_cli::commands::{run_calibrate, run_diagnose, run_rates, run_solve, CalibrateConfig, DiagnoseConfig, RatesConfig, SolveConfig};
use rerm_cli::config::SweepConfig;
use rerm_cli::report::{cell_rates, emit_report};
use rerm_cli::sweep::{read_records, run_sweep_to_csv};
use rerm_cli::{load_json, ConfigError};

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "rerm", version, about = "Regularized least squares: fits, calibration, rates and sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed (the master seed for sweeps).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one generated instance; writes solution.json and trace.csv.
    Solve,
    /// Compute λ, widths and fixed points; writes calibration.json.
    Calibrate,
    /// Tabulate theoretical rates; writes rates.csv and rates.json.
    Rates,
    /// Small-ball and moment-growth diagnostics; writes diagnose.json.
    Diagnose,
    /// Run a parameter sweep; streams records to the configured CSV.
    Sweep,
    /// Summarize the records of a finished sweep.
    Report,
}

enum Outcome {
    Done,
    PartialFailure(usize),
}

fn config_path(cli: &Cli) -> Result<&Path, ConfigError> {
    cli.config
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid("--config <json> is required".into()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_sweep(cli: &Cli) -> Result<SweepConfig, ConfigError> {
    let mut config = SweepConfig::load(config_path(cli)?)?;
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    Ok(config)
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match cli.command {
        Command::Solve => {
            let mut config: SolveConfig = load_json(config_path(cli)?)?;
            config.seed = cli.seed.unwrap_or(config.seed);
            let output = run_solve(&config)?;
            write_json(&cli.out_dir.join("solution.json"), &output)?;
            let trace = fs::File::create(cli.out_dir.join("trace.csv"))?;
            output.solution.write_trace_csv(trace)?;
            println!("status {:?}, error {:.6e}", output.solution.status, output.error);
        }
        Command::Calibrate => {
            let mut config: CalibrateConfig = load_json(config_path(cli)?)?;
            config.seed = cli.seed.unwrap_or(config.seed);
            let output = run_calibrate(&config)?;
            write_json(&cli.out_dir.join("calibration.json"), &output)?;
            println!("lambda {:.6e}", output.calibration.lambda);
        }
        Command::Rates => {
            let config: RatesConfig = load_json(config_path(cli)?)?;
            let output = run_rates(&config)?;
            let file = fs::File::create(cli.out_dir.join("rates.csv"))?;
            write_rate_csv(file, &output.complexity)?;
            write_json(&cli.out_dir.join("rates.json"), &output)?;
        }
        Command::Diagnose => {
            let mut config: DiagnoseConfig = load_json(config_path(cli)?)?;
            config.seed = cli.seed.unwrap_or(config.seed);
            let output = run_diagnose(&config)?;
            write_json(&cli.out_dir.join("diagnose.json"), &output)?;
            println!(
                "eps_hat {:.4}, kappa0_hat {:.4}, moment assumption {}",
                output.small_ball.eps_hat,
                output.moment_growth.kappa0_hat,
                if output.moment_growth.violated { "violated" } else { "not rejected" }
            );
        }
        Command::Sweep => {
            let config = load_sweep(cli)?;
            let path = cli.out_dir.join(&config.output.records);
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            let records = run_sweep_to_csv(&config, file)?;
            let failed = records.iter().filter(|r| !r.succeeded()).count();
            println!("{} records written to {}", records.len(), path.display());
            if failed > 0 {
                return Ok(Outcome::PartialFailure(failed));
            }
        }
        Command::Report => {
            let config = load_sweep(cli)?;
            let path = cli.out_dir.join(&config.output.records);
            let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let records = read_records(file)?;
            let rates = cell_rates(&config)?;
            let (summary, paths) = emit_report(&records, &rates, &cli.out_dir.join(&config.output.report_dir))?;
            for fit in &summary.slopes_vs_n {
                if let Some(f) = &fit.fit {
                    println!("{}: slope {:.3}", fit.curve, f.slope);
                }
            }
            println!("{} files written", paths.len());
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::PartialFailure(n)) => {
            eprintln!("warning: {n} trials failed; see the status column");
            ExitCode::from(EXIT_PARTIAL_FAILURE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
