//! Command-line interface: `estimate`, `tune` and `simulate`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use pfgls_core::covariance::{CvConfig, Kernel, ThresholdMode};
use pfgls_core::estimators::{fgls_pipeline, tune_and_estimate, TuningRequest};
use pfgls_core::monte_carlo::{draw_replication, fixed_structure, DgpConfig, EstimatorSet, ExperimentSpec};
use pfgls_core::panel::{build_stacked, ols, OlsSeKind};
use pfgls_core::DesignSpec;

use crate::error::{CliError, Result};
use crate::ingest::{panel_to_csv, read_long_csv, ColumnMap};
use crate::output::{write_atomic, write_block_dump};
use crate::parallel::run_experiment_parallel;
use crate::report::{curve_csv, render_estimate, render_simulation, render_tune, EstimateReport, Format};
use crate::config;

#[derive(Debug, Parser)]
#[command(
    name = "pfgls",
    version,
    about = "Feasible GLS for balanced panels with a thresholded, banded error covariance",
    args_override_self = true
)]
pub struct Cli {
    /// Flat `key = value` file with defaults for the subcommand's flags;
    /// flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// Write the report to FILE (atomically) instead of standard output.
    #[arg(long, global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,

    /// Worker threads for simulations: a count or `auto`.
    #[arg(long, global = true, default_value = "auto", value_parser = parse_threads)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// OLS and FGLS estimates from a long-form panel file.
    Estimate(EstimateArgs),
    /// Cross-validate the threshold constant and report its curve.
    Tune(TuneArgs),
    /// Monte Carlo comparison of OLS, FGLS(Diag), FGLS and oracle GLS.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Bartlett,
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrendArg {
    /// A linear trend per unit.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FixedEffects {
    pub unit: bool,
    pub time: bool,
}

fn parse_fe(s: &str) -> std::result::Result<FixedEffects, String> {
    let mut fe = FixedEffects::default();
    if s == "none" {
        return Ok(fe);
    }
    for part in s.split(',').map(str::trim) {
        match part {
            "unit" => fe.unit = true,
            "time" => fe.time = true,
            other => return Err(format!("unknown fixed effect {other:?}; use unit, time, unit,time or none")),
        }
    }
    Ok(fe)
}

fn parse_threads(s: &str) -> std::result::Result<usize, String> {
    if s == "auto" {
        return Ok(0);
    }
    s.parse::<usize>().map_err(|_| format!("expected a thread count or `auto`, got {s:?}"))
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Long-form CSV (comma, tab or semicolon delimited) with a header row.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, default_value = "unit")]
    pub unit_col: String,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    /// Comma-separated regressor columns.
    #[arg(long, value_delimiter = ',', required = true, action = clap::ArgAction::Set, num_args = 1)]
    pub x_cols: Vec<String>,
    /// Fixed effects removed before estimation: unit, time, unit,time or none.
    #[arg(long, default_value = "unit,time", value_parser = parse_fe)]
    pub fe: FixedEffects,
    /// Also remove a linear trend per unit.
    #[arg(long, value_enum)]
    pub trend: Option<TrendArg>,
    /// Per-row column of positive unit weights (constant within a unit).
    #[arg(long)]
    pub weights_col: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    /// Bandwidth; defaults to round(4 (T/100)^(2/9)) (3 for simulations).
    #[arg(long = "L", value_name = "L")]
    pub lag: Option<usize>,
    /// Threshold constant; cross-validated when absent.
    #[arg(long = "M", value_name = "M", conflicts_with = "auto_tune")]
    pub threshold: Option<f64>,
    /// Cross-validate the threshold constant (the default without --M).
    #[arg(long)]
    pub auto_tune: bool,
    #[arg(long, value_enum, default_value_t = KernelArg::Bartlett)]
    pub kernel: KernelArg,
    /// Zero a pair at every lag unless some lag exceeds its threshold.
    #[arg(long)]
    pub universal_threshold: bool,
    /// Number of log-spaced cross-validation grid points.
    #[arg(long = "M-grid", value_name = "POINTS", default_value_t = 50)]
    pub m_grid: usize,
    /// Cross-validation folds; round(ln T) when absent.
    #[arg(long)]
    pub folds: Option<usize>,
}

impl TuningArgs {
    fn request(&self, default_lag: Option<usize>) -> Result<TuningRequest> {
        if self.m_grid == 0 {
            return Err(CliError::Config("--M-grid must be positive".into()));
        }
        if let Some(m) = self.threshold {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(CliError::Config(format!("--M must be a finite non-negative number, got {m}")));
            }
        }
        Ok(TuningRequest {
            lag: self.lag.or(default_lag),
            threshold_constant: self.threshold,
            kernel: match self.kernel {
                KernelArg::Bartlett => Kernel::Bartlett,
                KernelArg::Truncated => Kernel::Truncated,
            },
            mode: if self.universal_threshold { ThresholdMode::Universal } else { ThresholdMode::LagWise },
            cv: CvConfig {
                folds: self.folds,
                grid_size: self.m_grid,
                ..CvConfig::default()
            },
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Write the estimated covariance blocks in the binary block dump format.
    #[arg(long, value_name = "FILE")]
    pub dump_omega: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Also write the cross-validation curve as `M,objective` CSV.
    #[arg(long, value_name = "FILE")]
    pub curve_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long = "N", default_value_t = 50)]
    pub n: usize,
    #[arg(long = "T", default_value_t = 50)]
    pub t: usize,
    /// Number of equal-size clusters.
    #[arg(long = "G", default_value_t = 25)]
    pub g: usize,
    /// Upper bound of the within-cluster correlations.
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    /// Upper bound of the heteroskedasticity scales [default: sqrt(5)].
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long, default_value_t = 0.6)]
    pub rho_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta0: f64,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Size of the tests of beta = beta0.
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    /// Also run GLS with the true covariance.
    #[arg(long)]
    pub oracle: bool,
    /// Draw the covariance structure once instead of per replication.
    #[arg(long)]
    pub fixed_structure: bool,
    /// Write the panel of replication 0 as long-form CSV.
    #[arg(long, value_name = "FILE")]
    pub emit_csv: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

const SUBCOMMANDS: [&str; 3] = ["estimate", "tune", "simulate"];

/// `--config` value and subcommand position, found without full parsing
/// because required flags may live in the config file.
fn scan(args: &[OsString]) -> (Option<PathBuf>, Option<usize>) {
    let mut config = None;
    let mut sub = None;
    let mut k = 1;
    while k < args.len() {
        let a = args[k].to_string_lossy();
        if a == "--config" {
            config = args.get(k + 1).map(PathBuf::from);
            k += 2;
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if sub.is_none() && SUBCOMMANDS.contains(&a.as_ref()) {
            sub = Some(k);
        }
        k += 1;
    }
    (config, sub)
}

/// Parses arguments, merging a config file if one is named.
pub fn parse_args(args: Vec<OsString>) -> std::result::Result<Cli, ParseFailure> {
    let (config_path, sub) = scan(&args);
    let mut full = args.clone();
    if let (Some(path), Some(at)) = (config_path, sub) {
        let entries = config::read(&path).map_err(ParseFailure::Config)?;
        let cmd = Cli::command();
        let subcmd = cmd.find_subcommand(args[at].to_string_lossy().as_ref()).expect("known subcommand");
        let lookup = |key: &str| {
            if key == "config" || key == "help" || key == "version" {
                return None;
            }
            subcmd
                .get_arguments()
                .chain(cmd.get_arguments())
                .find(|a| a.get_long() == Some(key))
                .map(|a| a.get_action().takes_values())
        };
        let extra = config::to_args(&entries, lookup).map_err(ParseFailure::Config)?;
        full.splice(at + 1..at + 1, extra.into_iter().map(OsString::from));
    }
    Cli::try_parse_from(full).map_err(ParseFailure::Clap)
}

#[derive(Debug)]
pub enum ParseFailure {
    Clap(clap::Error),
    Config(CliError),
}

fn data_spec(d: &DataArgs) -> (ColumnMap, DesignSpec) {
    let columns = ColumnMap {
        unit: d.unit_col.clone(),
        time: d.time_col.clone(),
        y: d.y_col.clone(),
        x: d.x_cols.clone(),
        weights: d.weights_col.clone(),
    };
    let spec = DesignSpec {
        unit_fe: d.fe.unit,
        time_fe: d.fe.time,
        unit_trend: d.trend.is_some(),
        weights: None,
    };
    (columns, spec)
}

fn load(d: &DataArgs) -> Result<(pfgls_core::PanelData, DesignSpec)> {
    let (columns, mut spec) = data_spec(d);
    let ingested = read_long_csv(&d.input, &columns)?;
    spec.weights = ingested.weights;
    Ok((ingested.panel, spec))
}

pub fn estimate(a: &EstimateArgs, format: Format) -> Result<String> {
    let (panel, spec) = load(&a.data)?;
    let request = a.tuning.request(None)?;
    let out = fgls_pipeline(&panel, &spec, &request)?;
    if let Some(path) = &a.dump_omega {
        write_block_dump(path, &out.omega.matrix)?;
    }
    let report = EstimateReport {
        variables: a.data.x_cols.clone(),
        n_units: panel.n_units(),
        n_periods: panel.n_periods(),
        transform_log: out.model.transform_log.clone(),
        ols: [OlsSeKind::Iid, OlsSeKind::White, OlsSeKind::ClusterByUnit].map(|k| out.ols.result(&out.model, k)),
        fgls: out.fgls,
    };
    Ok(render_estimate(&report, format))
}

pub fn tune(a: &TuneArgs, format: Format) -> Result<String> {
    if a.tuning.threshold.is_some() {
        return Err(CliError::Config("tune cross-validates the threshold; drop --M".into()));
    }
    let (panel, spec) = load(&a.data)?;
    let model = build_stacked(&panel, &spec)?;
    let fit = ols(&model)?;
    let (_, provenance) = tune_and_estimate(&fit.residual_matrix(), &a.tuning.request(None)?)?;
    if let Some(path) = &a.curve_csv {
        write_atomic(path, curve_csv(&provenance.cv_curve).as_bytes())?;
    }
    Ok(render_tune(&provenance, format))
}

pub fn simulation_spec(a: &SimulateArgs) -> Result<ExperimentSpec> {
    let dgp = DgpConfig {
        n_units: a.n,
        n_periods: a.t,
        clusters: a.g,
        gamma: a.gamma,
        hetero_max: a.m.unwrap_or(5f64.sqrt()),
        rho_max: a.rho_max,
        beta0: a.beta0,
        seed: a.seed,
        redraw_structure: !a.fixed_structure,
        ..DgpConfig::default()
    };
    dgp.validate()?;
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::Config(format!("--level must lie in (0, 1), got {}", a.level)));
    }
    let mut spec = ExperimentSpec::new(dgp, a.reps);
    spec.tuning = a.tuning.request(Some(3))?;
    spec.estimators = EstimatorSet {
        oracle: a.oracle,
        ..EstimatorSet::default()
    };
    spec.level = a.level;
    Ok(spec)
}

pub fn simulate(a: &SimulateArgs, format: Format, threads: usize) -> Result<String> {
    let spec = simulation_spec(a)?;
    if let Some(path) = &a.emit_csv {
        let shared = if spec.dgp.redraw_structure { None } else { Some(fixed_structure(&spec.dgp)?) };
        let (_, panel) = draw_replication(&spec.dgp, 0, shared.as_ref())?;
        write_atomic(path, panel_to_csv(&panel).as_bytes())?;
    }
    let report = run_experiment_parallel(&spec, threads)?;
    Ok(render_simulation(&report, format))
}

pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Estimate(a) => estimate(a, cli.format),
        Command::Tune(a) => tune(a, cli.format),
        Command::Simulate(a) => simulate(a, cli.format, cli.threads),
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Write { path: PathBuf::from("<stdout>"), source })
        }
    }
}

/// Runs the program and returns its exit code: 0 success, 1 input or data
/// error, 2 numerical failure, 3 configuration or usage error.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let cli = match parse_args(args) {
        Ok(c) => c,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
        }
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match execute(&cli).and_then(|text| emit(cli.output.as_deref(), &text)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
