//! Command-line front end for the simulator: run a scenario to per-round
//! CSV, sweep one scenario dimension across several values, or execute the
//! built-in self-checks.
//!
//! Exit codes: 0 success, 2 usage error, 3 configuration error, 4 I/O error,
//! 5 self-check or simulation failure, 6 agreement violation.

use clap::{Args, Parser, Subcommand};
use repsim::metrics::{
    apply_sweep_value, summarize, write_records_csv, write_sweep_csv, MetricsError, SweepParam,
    SweepRow,
};
use repsim::netsim::{SimError, Simulation};
use repsim::scenario::{load_scenario, ConfigError};
use repsim::verify::run_all_checks;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_CHECK: u8 = 5;
const EXIT_AGREEMENT: u8 = 6;

#[derive(Parser)]
#[command(
    name = "repsim",
    version,
    about = "Deterministic simulator for a reputation-weighted BFT proof-of-stake protocol"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit its per-round records as CSV.
    Run(RunArgs),
    /// Run the built-in self-checks; prints one line per check.
    Verify,
    /// Re-run a scenario at several values of one parameter and emit one
    /// summary row per value.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario's round count.
    #[arg(long)]
    rounds: Option<u64>,
    /// Override the scenario's RNG seed.
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Disable reputation weighting regardless of the scenario setting.
    #[arg(long)]
    no_reputation: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario file (JSON) used as the base point.
    #[arg(long)]
    config: PathBuf,
    /// Dimension to vary: p_th, honest_stake_fraction, or illicit_rate.
    #[arg(long)]
    param: String,
    /// Comma-separated values to run.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Write the sweep CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error ready to report: a message and the exit code it maps to.
struct CliError {
    code: u8,
    message: String,
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        let code = match e {
            ConfigError::Io(_) => EXIT_IO,
            ConfigError::Parse(_) | ConfigError::Invalid(_) => EXIT_CONFIG,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> CliError {
        let code = match e {
            SimError::AgreementViolation { .. } => EXIT_AGREEMENT,
            SimError::InvalidScenario(_) => EXIT_CONFIG,
            _ => EXIT_CHECK,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> CliError {
        CliError { code: EXIT_CONFIG, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError { code: EXIT_IO, message: e.to_string() }
    }
}


fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify => verify(),
        Command::Sweep(args) => sweep(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Writes `emit`'s output to the given path, or to stdout when absent.
fn write_output(
    out: &Option<PathBuf>,
    emit: impl Fn(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(path)?;
            emit(&mut file)?;
            file.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            // A closed pipe (e.g. `repsim run ... | head`) is a normal way
            // for a consumer to stop reading, not an I/O failure.
            if let Err(e) = emit(&mut lock).and_then(|()| lock.flush()) {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<ExitCode, CliError> {
    let mut config = load_scenario(&args.config)?;
    if let Some(rounds) = args.rounds {
        config.rounds = rounds;
    }
    if let Some(seed) = args.rng_seed {
        config.rng_seed = seed;
    }
    if args.no_reputation {
        config.params.reputation_enabled = false;
    }
    let report = Simulation::run_scenario(config)?;
    write_output(&args.out, |w| write_records_csv(w, &report.records))?;

    let s = summarize(&report.records);
    let ratio = s.mean_ratio_hm.map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
    eprintln!(
        "{} rounds: empty rate {:.4}, illicit round rate {:.4} ({} txs), \
         mean ratio_hm {}, mean steps {:.2}, mean effective votes {:.2}",
        s.rounds,
        s.empty_rate,
        s.illicit_round_rate,
        s.total_illicit_txs,
        ratio,
        s.mean_steps,
        s.mean_effective_votes
    );
    Ok(ExitCode::SUCCESS)
}

fn verify() -> Result<ExitCode, CliError> {
    let outcomes = run_all_checks();
    let mut failures = 0u32;
    for check in &outcomes {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("{status} {}: {}", check.name, check.detail);
        failures += u32::from(!check.passed);
    }
    if failures == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError {
            code: EXIT_CHECK,
            message: format!("{failures} of {} checks failed", outcomes.len()),
        })
    }
}

fn sweep(args: SweepArgs) -> Result<ExitCode, CliError> {
    let base = load_scenario(&args.config)?;
    let param: SweepParam = args.param.parse()?;
    let mut rows = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let mut config = base.clone();
        apply_sweep_value(&mut config, param, value)?;
        let report = Simulation::run_scenario(config)?;
        rows.push(SweepRow::from_report(param, value, &report));
    }
    write_output(&args.out, |w| write_sweep_csv(w, &rows))?;
    Ok(ExitCode::SUCCESS)
}
