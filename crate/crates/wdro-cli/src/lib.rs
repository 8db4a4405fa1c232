//! Command-line front end for the `wdro` library.
//!
//! Four subcommands share one JSON configuration document and one output
//! contract:
//!
//! * `predict` solves the scalar minimax problem and writes the prediction;
//! * `simulate` runs seeded Monte Carlo trials and writes per-trial records
//!   plus per-size aggregates;
//! * `sweep` evaluates predictions (optionally with simulations) along a
//!   parameter grid;
//! * `validate-envelopes` checks the closed-form envelope and branch
//!   functions against brute-force oracles.
//!
//! Outputs are CSV (a `# `-prefixed metadata line holding the fully
//! resolved configuration, then a fixed header, then rows with floats at 17
//! significant digits) or JSON (a `{"metadata", "results"}` document). No
//! output contains timestamps or machine identifiers: reruns of the same
//! configuration are byte-identical. Exit codes: 0 success, 1 configuration
//! error, 2 numeric or solver error.

// Validation code deliberately writes `!(x > 0.0)` instead of `x <= 0.0`
// so that NaN inputs fail the check along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use wdro::loss_models::{brute_force_envelope, LossError, LossModel};
use wdro::montecarlo::{self, DimSummary, ExperimentError, ExperimentSpec, Theta0Style};
use wdro::noise_models::{NoiseModel, QuadratureConfig};
use wdro::saddle_solver::{self, Prediction};
use wdro::scalarization::{e_function, expected_envelope_f, g_function, Mode, ProblemSpec};

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

/// A command failure, carrying its exit code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments, or input files (exit 1).
    Config(String),
    /// Numeric or solver failure during the run (exit 2).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

/// Top-level command line.
#[derive(Debug, Parser)]
#[command(
    name = "wdro",
    version,
    about = "Exact error predictions and seeded experiments for Wasserstein-robust linear regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Solve the scalar minimax problem and write the prediction.
    Predict(CommonArgs),
    /// Run seeded Monte Carlo trials and write records plus aggregates.
    Simulate(CommonArgs),
    /// Evaluate predictions along a parameter grid, optionally simulating.
    Sweep(CommonArgs),
    /// Check closed-form envelopes and branch functions against oracles.
    #[command(name = "validate-envelopes")]
    ValidateEnvelopes(CommonArgs),
}

impl CliCommand {
    fn common(&self) -> &CommonArgs {
        match self {
            CliCommand::Predict(c)
            | CliCommand::Simulate(c)
            | CliCommand::Sweep(c)
            | CliCommand::ValidateEnvelopes(c) => c,
        }
    }
}

/// Flags shared by all subcommands.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to the JSON configuration document.
    #[arg(long)]
    pub config: PathBuf,
    /// Output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    /// Worker threads (0 = library default). The WDRO_THREADS environment
    /// variable takes precedence over this flag.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override the experiment's base seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Output serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

// ---------------------------------------------------------------------------
// Configuration document
// ---------------------------------------------------------------------------

/// The JSON configuration document. Only `problem` is always required;
/// `experiment` is required by `simulate` (and by `sweep` when it
/// simulates), `sweep` by `sweep`, and `validation` has defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub validation: ValidationConfig,
}

/// Problem block with CLI-level defaults: `sigma_theta0` defaults to 1 and
/// `r_theta` to `4 sigma_theta0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub mode: Mode,
    pub loss: LossModel,
    pub noise: NoiseModel,
    pub rho: f64,
    #[serde(default)]
    pub epsilon0: f64,
    #[serde(default)]
    pub lambda0: f64,
    #[serde(default = "default_sigma_theta0")]
    pub sigma_theta0: f64,
    #[serde(default)]
    pub r_theta: Option<f64>,
    #[serde(default)]
    pub l_lower: Option<f64>,
}

fn default_sigma_theta0() -> f64 {
    1.0
}

impl ProblemConfig {
    /// Apply the defaults, producing the problem the library sees.
    pub fn resolve(&self) -> ProblemSpec {
        ProblemSpec {
            mode: self.mode,
            loss: self.loss,
            noise: self.noise,
            rho: self.rho,
            epsilon0: self.epsilon0,
            lambda0: self.lambda0,
            sigma_theta0: self.sigma_theta0,
            r_theta: self.r_theta.unwrap_or(4.0 * self.sigma_theta0),
            l_lower: self.l_lower,
        }
    }
}

/// Experiment block mirroring [`ExperimentSpec`] minus the problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: Vec<(usize, usize)>,
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub theta0_style: Theta0Style,
}

impl ExperimentConfig {
    fn resolve(&self, problem: &ProblemSpec, seed_override: Option<u64>) -> ExperimentSpec {
        ExperimentSpec {
            problem: problem.clone(),
            dims: self.dims.clone(),
            trials: self.trials,
            base_seed: seed_override.unwrap_or(self.base_seed),
            theta0_style: self.theta0_style,
        }
    }
}

/// Which scalar the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon0,
    Lambda0,
    Rho,
}

/// Grid spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridScale {
    Log,
    Linear,
}

/// Sweep block: a grid over one axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    #[serde(default = "default_grid_scale")]
    pub scale: GridScale,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Also run the Monte Carlo experiment at every grid point.
    #[serde(default)]
    pub simulate: bool,
}

fn default_grid_scale() -> GridScale {
    GridScale::Log
}

impl SweepConfig {
    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.points < 2 {
            return bad(format!(
                "sweep grids need at least 2 points, got {}",
                self.points
            ));
        }
        if !self.lo.is_finite() || !self.hi.is_finite() || !(self.lo < self.hi) {
            return bad(format!(
                "sweep needs finite lo < hi, got lo = {}, hi = {}",
                self.lo, self.hi
            ));
        }
        if self.scale == GridScale::Log && !(self.lo > 0.0) {
            return bad(format!(
                "log-scale sweeps need lo > 0, got lo = {}",
                self.lo
            ));
        }
        Ok(())
    }

    /// The grid, with the endpoints reproduced exactly.
    fn grid(&self) -> Vec<f64> {
        let n = self.points;
        (0..n)
            .map(|i| {
                if i == 0 {
                    self.lo
                } else if i == n - 1 {
                    self.hi
                } else {
                    let t = i as f64 / (n - 1) as f64;
                    match self.scale {
                        GridScale::Log => (self.lo.ln() + t * (self.hi / self.lo).ln()).exp(),
                        GridScale::Linear => self.lo + t * (self.hi - self.lo),
                    }
                }
            })
            .collect()
    }

    fn apply(&self, problem: &ProblemSpec, x: f64) -> ProblemSpec {
        let mut p = problem.clone();
        match self.axis {
            SweepAxis::Epsilon0 => p.epsilon0 = x,
            SweepAxis::Lambda0 => p.lambda0 = x,
            SweepAxis::Rho => p.rho = x,
        }
        p
    }
}

/// Tolerances and sizes for `validate-envelopes`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    /// Allowed gap between closed-form and brute-force envelopes.
    pub envelope_tolerance: f64,
    /// Allowed branch mismatch of the two-branch functions at their
    /// boundaries (and of the zero-noise component expectation).
    pub branch_tolerance: f64,
    /// Points of the uniform grid over `c` in `[-10, 10]`.
    pub grid_points: usize,
    /// Random boundary triples per branch function.
    pub triples: usize,
    /// Seed of the triple stream.
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            envelope_tolerance: 1e-8,
            branch_tolerance: 1e-12,
            grid_points: 81,
            triples: 1000,
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Process entry: parse `std::env::args_os()` and run.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parse the given arguments and run; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match try_main(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run one parsed command.
pub fn try_main(cli: &Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let raw = fs::read_to_string(&common.config).map_err(|e| {
        CliError::Config(format!(
            "cannot read config {}: {e}",
            common.config.display()
        ))
    })?;
    let file: FileConfig = serde_json::from_str(&raw)
        .map_err(|e| CliError::Config(format!("cannot parse config: {e}")))?;
    file.quadrature
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let problem = file.problem.resolve();
    problem
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let threads = resolve_threads(common.threads)?;
    if let Some(t) = threads {
        // Only the first global-pool build in a process can win; later
        // calls fail harmlessly, and results never depend on thread count.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }

    match &cli.command {
        CliCommand::Predict(c) => cmd_predict(&file, &problem, c, threads),
        CliCommand::Simulate(c) => cmd_simulate(&file, &problem, c, threads),
        CliCommand::Sweep(c) => cmd_sweep(&file, &problem, c, threads),
        CliCommand::ValidateEnvelopes(c) => cmd_validate_envelopes(&file, &problem, c, threads),
    }
}

/// Effective thread request: `WDRO_THREADS` beats `--threads`; absent both,
/// the library default stands.
fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("WDRO_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| {
                CliError::Config(format!(
                    "WDRO_THREADS must be a nonnegative integer, got {s:?}"
                ))
            }),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(e) => Err(CliError::Config(format!("cannot read WDRO_THREADS: {e}"))),
    }
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

/// Floats are written with 17 significant digits, enough to round-trip.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Serialized (externally tagged) name of a unit enum variant.
fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

/// The resolved-configuration record embedded in every output.
#[allow(clippy::too_many_arguments)]
fn metadata(
    command: &str,
    format: OutputFormat,
    problem: &ProblemSpec,
    quadrature: &QuadratureConfig,
    experiment: Option<&ExperimentSpec>,
    sweep: Option<&SweepConfig>,
    validation: Option<&ValidationConfig>,
    threads: Option<usize>,
) -> serde_json::Value {
    json!({
        "command": command,
        "format": enum_name(&format),
        "problem": problem,
        "quadrature": quadrature,
        "experiment": experiment.map(|e| json!({
            "dims": e.dims,
            "trials": e.trials,
            "base_seed": e.base_seed,
            "theta0_style": enum_name(&e.theta0_style),
        })),
        "sweep": sweep,
        "validation": validation,
        "threads": threads,
    })
}

fn write_out(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_csv(
    path: &PathBuf,
    meta: &serde_json::Value,
    header: &str,
    rows: &[String],
) -> Result<(), CliError> {
    let mut s = String::new();
    let _ = writeln!(s, "# {}", compact_json(meta)?);
    let _ = writeln!(s, "{header}");
    for row in rows {
        let _ = writeln!(s, "{row}");
    }
    write_out(path, &s)
}

fn write_json(
    path: &PathBuf,
    meta: &serde_json::Value,
    results: serde_json::Value,
) -> Result<(), CliError> {
    let doc = json!({ "metadata": meta, "results": results });
    let mut s = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::Numeric(format!("cannot serialize results: {e}")))?;
    s.push('\n');
    write_out(path, &s)
}

fn compact_json(v: &serde_json::Value) -> Result<String, CliError> {
    serde_json::to_string(v).map_err(|e| CliError::Numeric(format!("cannot serialize: {e}")))
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Numeric(format!("cannot serialize: {e}")))
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

const PREDICT_HEADER: &str =
    "alpha_star,alpha_star_sq,value,value_v1,value_v2,branch,tau1,tau2,beta,flags";

fn prediction_row(p: &Prediction) -> String {
    let flags = p
        .flags
        .iter()
        .map(enum_name)
        .collect::<Vec<_>>()
        .join(";");
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        fmt_f64(p.alpha_star),
        fmt_f64(p.alpha_star_sq),
        fmt_f64(p.value),
        fmt_opt(p.value_v1),
        fmt_opt(p.value_v2),
        enum_name(&p.branch),
        fmt_opt(p.witness.tau1),
        fmt_opt(p.witness.tau2),
        fmt_f64(p.witness.beta),
        flags
    )
}

fn cmd_predict(
    file: &FileConfig,
    problem: &ProblemSpec,
    common: &CommonArgs,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let prediction = saddle_solver::solve(problem, &file.quadrature)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let meta = metadata(
        "predict",
        common.format,
        problem,
        &file.quadrature,
        None,
        None,
        None,
        threads,
    );
    match common.format {
        OutputFormat::Csv => write_csv(
            &common.out,
            &meta,
            PREDICT_HEADER,
            &[prediction_row(&prediction)],
        ),
        OutputFormat::Json => write_json(
            &common.out,
            &meta,
            json!({ "prediction": to_value(&prediction)? }),
        ),
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

const SIMULATE_HEADER: &str = "record,d,n,trial,seed,error,iterations,converged,\
successes,failures,mean,std,std_err,alpha_star_sq,relative_gap";

fn summary_row(dim: &DimSummary, alpha_star_sq: f64) -> String {
    format!(
        "summary,{},{},,,,,,{},{},{},{},{},{},{}",
        dim.d,
        dim.n,
        dim.successes,
        dim.failures,
        fmt_f64(dim.mean),
        fmt_f64(dim.std),
        fmt_f64(dim.std_err),
        fmt_f64(alpha_star_sq),
        fmt_f64(dim.relative_gap),
    )
}

fn cmd_simulate(
    file: &FileConfig,
    problem: &ProblemSpec,
    common: &CommonArgs,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let exp_cfg = file.experiment.as_ref().ok_or_else(|| {
        CliError::Config("simulate requires an \"experiment\" block".to_string())
    })?;
    let spec = exp_cfg.resolve(problem, common.seed);
    spec.validate().map_err(map_experiment_error)?;
    let summary = montecarlo::run_experiment(&spec, &file.quadrature)
        .map_err(map_experiment_error)?;
    let meta = metadata(
        "simulate",
        common.format,
        problem,
        &file.quadrature,
        Some(&spec),
        None,
        None,
        threads,
    );
    match common.format {
        OutputFormat::Csv => {
            let mut rows = Vec::new();
            for (i, dim) in summary.dims.iter().enumerate() {
                let lo = i * spec.trials;
                for rec in &summary.records[lo..lo + spec.trials] {
                    rows.push(format!(
                        "trial,{},{},{},{},{},{},{},,,,,,,",
                        rec.d,
                        rec.n,
                        rec.trial,
                        rec.seed,
                        fmt_opt(rec.error),
                        rec.iterations,
                        rec.converged,
                    ));
                }
                rows.push(summary_row(dim, summary.prediction.alpha_star_sq));
            }
            write_csv(&common.out, &meta, SIMULATE_HEADER, &rows)
        }
        OutputFormat::Json => write_json(&common.out, &meta, to_value(&summary)?),
    }
}

fn map_experiment_error(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::InvalidSpec { .. } => CliError::Config(e.to_string()),
        _ => CliError::Numeric(e.to_string()),
    }
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

const SWEEP_HEADER: &str = "axis,x,alpha_star,alpha_star_sq,value,branch,continuity_ok,\
d,n,mean,std,std_err,successes,failures,relative_gap";

/// Allowed relative jump of `alpha_star^2` between adjacent grid points:
/// 5% per factor-1.1 step on log grids (the solver's continuity
/// guarantee), 5% per point on linear grids.
fn continuity_allowance(scale: GridScale, x0: f64, x1: f64) -> f64 {
    match scale {
        GridScale::Log => {
            let steps = (x1 / x0).ln() / 1.1f64.ln();
            0.05 * steps.abs().max(1.0)
        }
        GridScale::Linear => 0.05,
    }
}

struct SweepRow {
    x: f64,
    prediction: Prediction,
    continuity_ok: bool,
    simulation: Option<DimSummary>,
}

fn cmd_sweep(
    file: &FileConfig,
    problem: &ProblemSpec,
    common: &CommonArgs,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let sweep = file
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep requires a \"sweep\" block".to_string()))?;
    sweep.validate()?;
    match (sweep.axis, problem.mode.is_regularized()) {
        (SweepAxis::Lambda0, false) => {
            return Err(CliError::Config(
                "axis lambda0 requires a regularized (DRE) mode".to_string(),
            ))
        }
        (SweepAxis::Epsilon0, true) => {
            return Err(CliError::Config(
                "axis epsilon0 requires a DRO mode; regularized modes ignore epsilon0"
                    .to_string(),
            ))
        }
        _ => {}
    }
    let exp_cfg = if sweep.simulate {
        Some(file.experiment.as_ref().ok_or_else(|| {
            CliError::Config(
                "sweep with simulate = true requires an \"experiment\" block".to_string(),
            )
        })?)
    } else {
        None
    };

    // Validate the whole grid before starting any numeric work.
    let grid = sweep.grid();
    let mut specs = Vec::with_capacity(grid.len());
    for &x in &grid {
        let p = sweep.apply(problem, x);
        p.validate().map_err(|e| {
            CliError::Config(format!("grid point {} = {x} is invalid: {e}", axis_name(sweep)))
        })?;
        let exp = match exp_cfg {
            Some(cfg) => Some(resolve_sweep_experiment(sweep, cfg, &p, x, common.seed)?),
            None => None,
        };
        specs.push((x, p, exp));
    }

    let mut rows: Vec<SweepRow> = Vec::with_capacity(specs.len());
    for (x, p, exp) in &specs {
        let prediction = saddle_solver::solve(p, &file.quadrature)
            .map_err(|e| CliError::Numeric(format!("{} = {x}: {e}", axis_name(sweep))))?;
        let continuity_ok = match rows.last() {
            None => true,
            Some(prev) => {
                let a0 = prev.prediction.alpha_star_sq;
                let a1 = prediction.alpha_star_sq;
                let denom = a0.abs().max(a1.abs()).max(1e-12);
                (a1 - a0).abs() / denom <= continuity_allowance(sweep.scale, prev.x, *x)
            }
        };
        let simulation = match exp {
            Some(spec) => {
                let summary = montecarlo::run_experiment(spec, &file.quadrature)
                    .map_err(map_experiment_error)?;
                // Report the largest configured size; the full per-size
                // detail belongs to the simulate command.
                summary.dims.into_iter().max_by_key(|s| s.d)
            }
            None => None,
        };
        rows.push(SweepRow {
            x: *x,
            prediction,
            continuity_ok,
            simulation,
        });
    }

    let meta = metadata(
        "sweep",
        common.format,
        problem,
        &file.quadrature,
        specs.first().and_then(|(_, _, e)| e.as_ref()),
        Some(sweep),
        None,
        threads,
    );
    match common.format {
        OutputFormat::Csv => {
            let axis = axis_name(sweep);
            let csv_rows: Vec<String> = rows
                .iter()
                .map(|r| {
                    let sim = match &r.simulation {
                        Some(s) => format!(
                            "{},{},{},{},{},{},{},{}",
                            s.d,
                            s.n,
                            fmt_f64(s.mean),
                            fmt_f64(s.std),
                            fmt_f64(s.std_err),
                            s.successes,
                            s.failures,
                            fmt_f64(s.relative_gap)
                        ),
                        None => ",,,,,,,".to_string(),
                    };
                    format!(
                        "{axis},{},{},{},{},{},{},{sim}",
                        fmt_f64(r.x),
                        fmt_f64(r.prediction.alpha_star),
                        fmt_f64(r.prediction.alpha_star_sq),
                        fmt_f64(r.prediction.value),
                        enum_name(&r.prediction.branch),
                        r.continuity_ok,
                    )
                })
                .collect();
            write_csv(&common.out, &meta, SWEEP_HEADER, &csv_rows)
        }
        OutputFormat::Json => {
            let results: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    Ok(json!({
                        "x": r.x,
                        "prediction": to_value(&r.prediction)?,
                        "continuity_ok": r.continuity_ok,
                        "simulation": r.simulation.as_ref().map(to_value).transpose()?,
                    }))
                })
                .collect::<Result<_, CliError>>()?;
            write_json(&common.out, &meta, json!(results))
        }
    }
}

fn axis_name(sweep: &SweepConfig) -> String {
    enum_name(&sweep.axis)
}

/// Experiment at one sweep grid point. Along the `rho` axis the signal
/// dimensions are re-derived from the configured sample sizes
/// (`d = round(rho n)`, which keeps `|d/n - rho| <= 1/(2n)`).
fn resolve_sweep_experiment(
    sweep: &SweepConfig,
    cfg: &ExperimentConfig,
    problem: &ProblemSpec,
    x: f64,
    seed_override: Option<u64>,
) -> Result<ExperimentSpec, CliError> {
    let mut spec = cfg.resolve(problem, seed_override);
    if sweep.axis == SweepAxis::Rho {
        for (d, n) in spec.dims.iter_mut() {
            *d = ((x * *n as f64).round() as usize).max(1);
        }
    }
    spec.validate().map_err(|e| {
        CliError::Config(format!(
            "sweep grid point {} = {x}: {e}",
            axis_name(sweep)
        ))
    })?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// validate-envelopes
// ---------------------------------------------------------------------------

/// One oracle comparison of the validation suite.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationCheck {
    pub check: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub evaluations: usize,
    pub pass: bool,
}

/// Everything `validate-envelopes` measured.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
    pub pass: bool,
}

/// The loss set the envelope suite covers.
pub fn envelope_losses() -> Vec<LossModel> {
    vec![
        LossModel::Squared,
        LossModel::Absolute,
        LossModel::huber_default(),
        LossModel::Huber { delta: 1.0 },
    ]
}

/// Maximum deviation of `envelope(loss, c, tau)` from the brute-force
/// envelope over losses in [`envelope_losses`], `c` on a `grid_points`
/// uniform grid over `[-10, 10]`, and `tau` in `{0.1, 0.5, 1, 5, 20}`.
/// Taking the envelope as a parameter lets tests inject a wrong closed
/// form and confirm the suite rejects it.
pub fn envelope_oracle_deviation<F>(
    envelope: F,
    grid_points: usize,
) -> Result<(f64, usize), CliError>
where
    F: Fn(&LossModel, f64, f64) -> Result<f64, LossError>,
{
    if grid_points < 2 {
        return Err(CliError::Config(format!(
            "validation grid needs at least 2 points, got {grid_points}"
        )));
    }
    let taus = [0.1, 0.5, 1.0, 5.0, 20.0];
    let mut max_dev: f64 = 0.0;
    let mut evaluations = 0usize;
    for loss in envelope_losses() {
        for i in 0..grid_points {
            let c = -10.0 + 20.0 * i as f64 / (grid_points - 1) as f64;
            for &tau in &taus {
                let oracle =
                    brute_force_envelope(|v| loss.eval_loss(v), c, tau, c.abs() + 5.0, 1e-12)
                        .map_err(|e| CliError::Numeric(e.to_string()))?;
                let closed =
                    envelope(&loss, c, tau).map_err(|e| CliError::Numeric(e.to_string()))?;
                max_dev = max_dev.max((closed - oracle).abs());
                evaluations += 1;
            }
        }
    }
    Ok((max_dev, evaluations))
}

/// Maximum disagreement of the two branch expressions of the robustness
/// functions at their branch boundaries, over seeded random triples, also
/// checking the library evaluation against each branch.
pub fn branch_boundary_deviation(triples: usize, seed: u64) -> (f64, f64, usize) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut max_g: f64 = 0.0;
    let mut max_e: f64 = 0.0;
    for _ in 0..triples {
        let c = 5.0 * rng.random::<f64>();
        let rho = 0.05 + 4.95 * rng.random::<f64>();
        let s = 0.05 + 4.95 * rng.random::<f64>();
        let sr = rho.sqrt();

        // G: branches meet where sqrt(rho) hypot(c, s) = tau.
        let tau_g = sr * c.hypot(s);
        let g1 = c.hypot(s) / sr - tau_g / (2.0 * rho) - s / sr;
        let g2 = (c * c + s * s) / (2.0 * tau_g) - s / sr;
        let g_lib = g_function(c, tau_g, rho, s);
        max_g = max_g
            .max((g1 - g2).abs())
            .max((g_lib - g1).abs().min((g_lib - g2).abs()));

        // E: branches meet where hypot(c, sigma_z) = tau.
        let tau_e = c.hypot(s);
        let e1 = tau_e / 2.0 - s / sr;
        let e2 = (c * c + s * s) / (2.0 * tau_e) - s / sr;
        let e_lib = e_function(c, tau_e, rho, s);
        max_e = max_e
            .max((e1 - e2).abs())
            .max((e_lib - e1).abs().min((e_lib - e2).abs()));
    }
    (max_g, max_e, triples)
}

/// `E[e_f(c G + Z; tau)]` at `c = 0` under zero noise must vanish exactly
/// (the component's envelope is zero at the origin).
pub fn pointmass_f_zero_deviation(cfg: &QuadratureConfig) -> Result<f64, CliError> {
    let v = expected_envelope_f(
        0.0,
        1.0,
        &LossModel::huber_default(),
        &NoiseModel::PointMass,
        cfg,
    )
    .map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok(v.abs())
}

/// Run the full validation suite.
pub fn run_validation(
    vcfg: &ValidationConfig,
    qcfg: &QuadratureConfig,
) -> Result<ValidationReport, CliError> {
    let (env_dev, env_count) =
        envelope_oracle_deviation(|l, c, t| l.moreau_envelope(c, t), vcfg.grid_points)?;
    let (g_dev, e_dev, triples) = branch_boundary_deviation(vcfg.triples, vcfg.seed);
    let f_dev = pointmass_f_zero_deviation(qcfg)?;
    let checks = vec![
        ValidationCheck {
            check: "envelope_closed_form".to_string(),
            max_deviation: env_dev,
            tolerance: vcfg.envelope_tolerance,
            evaluations: env_count,
            pass: env_dev <= vcfg.envelope_tolerance,
        },
        ValidationCheck {
            check: "g_branch_boundary".to_string(),
            max_deviation: g_dev,
            tolerance: vcfg.branch_tolerance,
            evaluations: triples,
            pass: g_dev <= vcfg.branch_tolerance,
        },
        ValidationCheck {
            check: "e_branch_boundary".to_string(),
            max_deviation: e_dev,
            tolerance: vcfg.branch_tolerance,
            evaluations: triples,
            pass: e_dev <= vcfg.branch_tolerance,
        },
        ValidationCheck {
            check: "pointmass_f_zero".to_string(),
            max_deviation: f_dev,
            tolerance: vcfg.branch_tolerance,
            evaluations: 1,
            pass: f_dev <= vcfg.branch_tolerance,
        },
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(ValidationReport { checks, pass })
}

const VALIDATE_HEADER: &str = "check,max_deviation,tolerance,evaluations,pass";

fn cmd_validate_envelopes(
    file: &FileConfig,
    problem: &ProblemSpec,
    common: &CommonArgs,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let report = run_validation(&file.validation, &file.quadrature)?;
    for c in &report.checks {
        println!(
            "check {}: max deviation {:e} (tolerance {:e}) -> {}",
            c.check,
            c.max_deviation,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    let meta = metadata(
        "validate-envelopes",
        common.format,
        problem,
        &file.quadrature,
        None,
        None,
        Some(&file.validation),
        threads,
    );
    match common.format {
        OutputFormat::Csv => {
            let rows: Vec<String> = report
                .checks
                .iter()
                .map(|c| {
                    format!(
                        "{},{},{},{},{}",
                        c.check,
                        fmt_f64(c.max_deviation),
                        fmt_f64(c.tolerance),
                        c.evaluations,
                        c.pass
                    )
                })
                .collect();
            write_csv(&common.out, &meta, VALIDATE_HEADER, &rows)?;
        }
        OutputFormat::Json => write_json(&common.out, &meta, to_value(&report)?)?,
    }
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Numeric(
            "validation suite exceeded its tolerances".to_string(),
        ))
    }
}
