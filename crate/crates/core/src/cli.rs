//! `ceabc` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 configuration error,
//! 3 data error, 4 no accepted ABC samples.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::abc::{AbcResult, Envelope};
use crate::config::{ConfigError, GridSettings, ReportSettings, RunConfig};
use crate::data::SurveillanceDataset;
use crate::ic::{self, Compartment, VirginSummary};
use crate::integrate;
use crate::model::{StateVector, PARAM_NAMES};
use crate::pipeline::{self, Calibration, PipelineError};
use crate::report::{self, CeSummary, PosteriorSummary};
use crate::sampling::RngSeed;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NO_ACCEPTED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ceabc", version, about = "Epidemic model calibration with cross-entropy optimization and ABC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Surveillance CSV (`date,hospitalized,new_deaths,total_deaths`).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root random seed; required by `calibrate`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for forward simulations [default: available cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Weight of hospitalizations in the misfit.
    #[arg(long, global = true)]
    pub omega: Option<f64>,
    /// ABC acceptance tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Outbreak in a fully susceptible population with nominal parameters.
    Simulate,
    /// Initial state matched to reference hospitalization and death counts.
    InferIc,
    /// CE optimization and ABC inference against the data window.
    Calibrate,
    /// Forecast envelopes from a previous `calibrate` output directory.
    Predict {
        /// Days beyond the calibration window.
        #[arg(long, default_value_t = 30)]
        horizon: usize,
    },
    /// Writes a dataset generated by the model with seeded noise.
    GenSynthetic,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_RUNTIME, format!("io error: {e}"))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Config(_) => EXIT_CONFIG,
            PipelineError::Data(_) => EXIT_DATA,
            PipelineError::NoAcceptedSamples { .. } => EXIT_NO_ACCEPTED,
            _ => EXIT_RUNTIME,
        };
        Self::new(code, e.to_string())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::new(EXIT_CONFIG, "--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::new(EXIT_RUNTIME, format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::InferIc => cmd_infer_ic(&cfg),
        Command::Calibrate => cmd_calibrate(&cfg),
        Command::Predict { horizon } => cmd_predict(&cfg, *horizon),
        Command::GenSynthetic => cmd_gen_synthetic(&cfg),
    })
}

/// Configuration file with command-line overrides applied, validated.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.data {
        cfg.paths.data = Some(d.clone());
    }
    if let Some(o) = &cli.out {
        cfg.paths.out = o.clone();
    }
    if let Some(w) = cli.omega {
        cfg.omega = w;
    }
    if let Some(t) = cli.tol {
        cfg.abc.tol = t;
    }
    match (&cli.command, cli.seed) {
        (Command::Calibrate, None) => {
            return Err(CliError::new(EXIT_CONFIG, "calibrate requires --seed"));
        }
        (Command::GenSynthetic, Some(s)) => cfg.synthetic.seed = s,
        (_, Some(s)) => cfg.seed = Some(s),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::new(EXIT_RUNTIME, format!("json: {e}")))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_with<F>(dir: &Path, name: &str, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(dir, name)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_envelope(dir: &Path, prefix: &str, env: &Envelope) -> Result<(), CliError> {
    for b in &env.blocks {
        write_with(dir, &format!("{prefix}_{}.csv", b.label), |w| b.write_csv(&env.times, w))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    config: &'a RunConfig,
    summary: VirginSummary,
}

fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let traj = pipeline::virgin_trajectory(cfg).map_err(PipelineError::from)?;
    let out = &cfg.paths.out;
    write_with(out, "trajectory.csv", |w| traj.write_csv(w))?;
    write_with(out, "admissions.csv", |w| {
        writeln!(w, "t,cumulative_admissions")?;
        for (t, c) in traj.times.iter().zip(&traj.cumulative_admissions) {
            writeln!(w, "{t},{c}")?;
        }
        Ok(())
    })?;
    let summary = VirginSummary::from_trajectory(&traj, cfg.virgin.n0).map_err(PipelineError::from)?;
    eprintln!(
        "peak active {:.0} on day {}, peak hospitalized {:.0} on day {}",
        summary.peak_active, summary.peak_active_day, summary.peak_hospitalized, summary.peak_hospitalized_day
    );
    write_json(out, "simulate.json", &SimulateReport { config: cfg, summary })
}

#[derive(Serialize)]
struct MatchReport {
    component: Compartment,
    value: f64,
    day: f64,
    state: StateVector,
}

#[derive(Serialize)]
struct IcReport<'a> {
    config: &'a RunConfig,
    matches: Vec<MatchReport>,
    weights: [f64; 2],
    initial_condition: StateVector,
}

fn ic_report<'a>(cfg: &'a RunConfig, inferred: &ic::InferredState) -> IcReport<'a> {
    IcReport {
        config: cfg,
        matches: inferred
            .matches
            .iter()
            .map(|(r, day, state)| MatchReport {
                component: r.component,
                value: r.value,
                day: *day,
                state: *state,
            })
            .collect(),
        weights: cfg.ic.weights(),
        initial_condition: inferred.blended,
    }
}

fn optional_window(cfg: &RunConfig) -> Result<Option<SurveillanceDataset>, CliError> {
    if cfg.paths.data.is_none() {
        return Ok(None);
    }
    Ok(Some(pipeline::load_window(cfg)?))
}

fn cmd_infer_ic(cfg: &RunConfig) -> Result<(), CliError> {
    let window = if cfg.ic.h_ref.is_some() && cfg.ic.d_ref.is_some() {
        None
    } else {
        optional_window(cfg)?
    };
    let virgin = pipeline::virgin_trajectory(cfg).map_err(PipelineError::from)?;
    let inferred = pipeline::infer_initial_condition(cfg, &virgin, window.as_ref())?;
    let out = &cfg.paths.out;
    write_with(out, "initial_condition.csv", |w| ic::write_state_csv(&inferred.blended, w))?;
    write_json(out, "infer_ic.json", &ic_report(cfg, &inferred))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowInfo {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub days: usize,
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    config: &'a RunConfig,
    window: WindowInfo,
    initial_condition: StateVector,
    parameter_names: [&'static str; 12],
    ce: CeSummary,
    abc: PosteriorSummary,
}

fn write_fit(
    w: &mut impl Write,
    window: &SurveillanceDataset,
    ce: &[Vec<f64>],
    best: &[Vec<f64>],
) -> std::io::Result<()> {
    writeln!(w, "t,date,data_H,data_D,ce_H,ce_D,best_H,best_D")?;
    for k in 0..window.len() {
        writeln!(
            w,
            "{k},{},{},{},{},{},{},{}",
            window.dates()[k],
            window.hospitalized()[k],
            window.total_deaths()[k],
            ce[0][k],
            ce[1][k],
            best[0][k],
            best[1][k]
        )?;
    }
    Ok(())
}

const GNUPLOT: &str = "\
set datafile separator ','
set key top left
set xlabel 'day'
set multiplot layout 1,2
set title 'Hospitalized'
plot 'envelope_H.csv' using 1:2:4 with filledcurves lc rgb '#bcd4ec' title 'credible band', \\
     '' using 1:3 with lines lw 2 lc rgb '#1f4e79' title 'median', \\
     'fit.csv' using 1:3 with points pt 7 ps 0.6 lc rgb 'black' title 'data'
set title 'Deaths'
plot 'envelope_D.csv' using 1:2:4 with filledcurves lc rgb '#f2c9c0' title 'credible band', \\
     '' using 1:3 with lines lw 2 lc rgb '#8b1a1a' title 'median', \\
     'fit.csv' using 1:4 with points pt 7 ps 0.6 lc rgb 'black' title 'data'
unset multiplot
";

fn cmd_calibrate(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = RngSeed(cfg.seed.expect("seed checked during resolution"));
    let window = pipeline::load_window(cfg)?;
    let virgin = pipeline::virgin_trajectory(cfg).map_err(PipelineError::from)?;
    let inferred = pipeline::infer_initial_condition(cfg, &virgin, Some(&window))?;
    let out = &cfg.paths.out;
    write_with(out, "config.toml", |w| w.write_all(cfg.to_toml().as_bytes()))?;
    write_with(out, "initial_condition.csv", |w| ic::write_state_csv(&inferred.blended, w))?;
    write_json(out, "infer_ic.json", &ic_report(cfg, &inferred))?;

    let cal = match pipeline::calibrate(cfg, &window, inferred.blended, seed) {
        Ok(c) => c,
        Err(PipelineError::NoAcceptedSamples { evaluated, ce }) => {
            write_with(out, "ce_history.csv", |w| ce.write_history_csv(w))?;
            return Err(CliError::new(
                EXIT_NO_ACCEPTED,
                format!("no sample out of {evaluated} met tol = {}", cfg.abc.tol),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let Calibration { ce, abc, envelope, .. } = &cal;
    eprintln!(
        "CE: j_opt = {:.4e} after {} iterations; ABC: {} of {} accepted",
        ce.j_opt,
        ce.iterations_run,
        abc.accepted.len(),
        abc.n_evaluated
    );

    write_with(out, "ce_history.csv", |w| ce.write_history_csv(w))?;
    write_with(out, "accepted_samples.csv", |w| abc.write_samples_csv(w, &PARAM_NAMES))?;
    write_envelope(out, "envelope", envelope)?;
    let best = abc.best().expect("nonempty accepted set");
    write_with(out, "fit.csv", |w| write_fit(w, &window, &ce.y_opt, &best.series))?;

    let summary = report::summarize(abc, &PARAM_NAMES, &cfg.sampling_bounds(), cfg.report.bins)
        .map_err(|e| CliError::new(EXIT_RUNTIME, e.to_string()))?;
    write_with(out, "histogram.csv", |w| report::write_histogram_csv(&summary, w))?;
    write_with(out, "scatter.csv", |w| report::write_scatter_csv(&summary, w))?;
    if cfg.report.gnuplot {
        write_with(out, "plot.gp", |w| w.write_all(GNUPLOT.as_bytes()))?;
    }
    write_json(
        out,
        "summary.json",
        &CalibrationReport {
            config: cfg,
            window: WindowInfo {
                start: window.first_date(),
                end: window.last_date(),
                days: window.len(),
            },
            initial_condition: inferred.blended,
            parameter_names: PARAM_NAMES,
            ce: report::summarize_ce(ce),
            abc: summary,
        },
    )
}

#[derive(Deserialize)]
struct SummaryConfigHead {
    grid: GridSettings,
    report: ReportSettings,
}

#[derive(Deserialize)]
struct SummaryAbcHead {
    n_evaluated: usize,
    tol: f64,
}

#[derive(Deserialize)]
struct SummaryHead {
    config: SummaryConfigHead,
    window: WindowInfo,
    abc: SummaryAbcHead,
}

#[derive(Serialize)]
struct ForecastReport<'a> {
    config: &'a RunConfig,
    window: WindowInfo,
    horizon: usize,
    n_accepted: usize,
    n_simulated: usize,
    substeps: usize,
    level: f64,
}

/// Uses the integration settings and envelope level recorded by
/// `calibrate`, so a zero horizon reproduces the calibration envelopes.
fn cmd_predict(cfg: &RunConfig, horizon: usize) -> Result<(), CliError> {
    let out = &cfg.paths.out;
    let missing = |name: &str, e: &dyn std::fmt::Display| {
        CliError::new(EXIT_DATA, format!("{}: {e}", out.join(name).display()))
    };
    let text = std::fs::read_to_string(out.join("summary.json")).map_err(|e| missing("summary.json", &e))?;
    let head: SummaryHead = serde_json::from_str(&text).map_err(|e| missing("summary.json", &e))?;
    let samples = File::open(out.join("accepted_samples.csv")).map_err(|e| missing("accepted_samples.csv", &e))?;
    let result = AbcResult::read_samples_csv(samples, head.abc.n_evaluated, head.abc.tol)
        .map_err(|e| missing("accepted_samples.csv", &e))?;
    let ic_file = File::open(out.join("initial_condition.csv")).map_err(|e| missing("initial_condition.csv", &e))?;
    let initial = ic::read_state_csv(ic_file).map_err(|e| missing("initial_condition.csv", &e))?;

    let params: Vec<Vec<f64>> = result.accepted.iter().map(|s| s.params.clone()).collect();
    let substeps = head.config.grid.substeps;
    let level = head.config.report.level;
    let (env, n_ok) = pipeline::forecast(initial, &params, head.window.days, horizon, substeps, level)
        .map_err(|e| CliError::new(EXIT_NO_ACCEPTED, e.to_string()))?;
    write_envelope(out, "forecast", &env)?;
    write_json(
        out,
        "forecast.json",
        &ForecastReport {
            config: cfg,
            window: head.window,
            horizon,
            n_accepted: params.len(),
            n_simulated: n_ok,
            substeps,
            level,
        },
    )
}

#[derive(Serialize)]
struct SyntheticReport<'a> {
    config: &'a RunConfig,
    initial_condition: StateVector,
}

fn cmd_gen_synthetic(cfg: &RunConfig) -> Result<(), CliError> {
    let (inferred, ds) = pipeline::synthetic_dataset(cfg)?;
    let out = &cfg.paths.out;
    let mut w = create(out, "synthetic_data.csv")?;
    ds.write_csv(&mut w).map_err(|e| CliError::new(EXIT_RUNTIME, e.to_string()))?;
    w.flush()?;
    write_with(out, "synthetic_ic.csv", |w| ic::write_state_csv(&inferred.blended, w))?;
    let traj = integrate::integrate(
        &inferred.blended,
        &cfg.synthetic.params,
        &integrate::TimeGrid::daily(cfg.synthetic.days, cfg.grid.substeps),
    )
    .map_err(|e| CliError::new(EXIT_RUNTIME, e.to_string()))?;
    write_with(out, "synthetic_truth.csv", |w| traj.write_csv(w))?;
    write_json(
        out,
        "synthetic.json",
        &SyntheticReport {
            config: cfg,
            initial_condition: inferred.blended,
        },
    )
}
