//! The `ptfon` command-line tool.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::domain::{Algorithm, Schedule, SystemConfig};
use crate::error::{Error, Result};
use crate::ingest::{
    load_trace, parse_instant, resample_to_subhours, write_trace, GapPolicy, ResampleOptions, SubHourSeries, TraceKind,
};
use crate::metrics::{summarize_run, RunReport};
use crate::predictor::{fit_weights, run_predictions, FitMethod, FitReport, FittedModel, WeightSet, SUBHOURS_PER_DAY};
use crate::refsolver::{bcd_best_of, SolverOptions};
use crate::scheduler::{ptf_offline, ptfon_run, sg_tdma, verify_schedule, HorizonMode, KsepForecaster, PtfOnOptions};
use crate::synthetic::{daylight_envelope, diurnal, irradiation_samples, model_series, DiurnalOptions};

const DAY: usize = SUBHOURS_PER_DAY;

#[derive(Debug, Parser)]
#[command(name = "ptfon", version, about = "Solar harvest prediction and fair downlink scheduling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit predictor weights to a harvest trace.
    Fit {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_enum, default_value_t = Method::Newton)]
        method: Method,
    },
    /// One-step K-SEP and S-SEP predictions against the real harvest.
    Predict {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Offline scheduling of one frame with known harvests.
    Schedule {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value = "ptf", value_parser = parse_algorithm)]
        algo: Algorithm,
        /// BCD restarts (the first starts from the flat profile).
        #[arg(long, default_value_t = 10)]
        restarts: usize,
    },
    /// Online scheduling over a window of frames.
    Simulate {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value = "ptfon", value_parser = parse_algorithm)]
        algo: Algorithm,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Horizon::Sliding)]
        horizon: Horizon,
    },
    /// PTF-On, SG+TDMA and offline PTF on the same frames.
    Compare {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Horizon::Sliding)]
        horizon: Horizon,
    },
    /// Write a seeded synthetic power and irradiation trace.
    Generate {
        #[arg(long, default_value_t = 4)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Low day-to-day and intra-day variability.
        #[arg(long)]
        sunny: bool,
        /// Mean daily harvest the trace is scaled to.
        #[arg(long, default_value_t = 480.0)]
        daily_energy_kj: f64,
        /// Draw sub-hour harvests from the predictor's own model instead,
        /// with weights `alpha1,alpha2,beta1`.
        #[arg(long, value_delimiter = ',')]
        model_weights: Option<Vec<f64>>,
        /// Process noise std (J) for `--model-weights`.
        #[arg(long, default_value_t = 0.0)]
        model_noise: f64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Io {
    /// Power trace CSV (`timestamp,value`, W).
    #[arg(long)]
    pub trace: PathBuf,
    /// Irradiation trace CSV (`timestamp,value`, W/m²).
    #[arg(long)]
    pub irradiance: Option<PathBuf>,
    /// `key = value` system configuration; defaults to the reference setup.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start of the window (epoch seconds or RFC 3339).
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Zero-fill sub-hours without samples instead of failing.
    #[arg(long)]
    pub fill_gaps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Newton,
    Ols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Horizon {
    Sliding,
    FrameEnd,
}

impl From<Horizon> for PtfOnOptions {
    fn from(h: Horizon) -> Self {
        let horizon = match h {
            Horizon::Sliding => HorizonMode::Sliding,
            Horizon::FrameEnd => HorizonMode::FrameEnd,
        };
        PtfOnOptions { horizon }
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm> {
    s.parse()
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Gap { .. } = e {
                eprintln!("hint: pass --fill-gaps to zero-fill missing sub-hours");
            }
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Fit { io, method } => fit(io, *method),
        Command::Predict { io, weights } => predict(io, weights.as_deref()),
        Command::Schedule { io, algo, restarts } => schedule(io, *algo, *restarts),
        Command::Simulate { io, algo, weights, horizon } => simulate(io, *algo, weights.as_deref(), *horizon),
        Command::Compare { io, weights, horizon } => compare(io, weights.as_deref(), *horizon),
        Command::Generate { days, seed, out, sunny, daily_energy_kj, model_weights, model_noise } => generate(
            *days,
            *seed,
            out,
            *sunny,
            *daily_energy_kj,
            model_weights.as_deref(),
            *model_noise,
        ),
    }
}

struct Loaded {
    cfg: SystemConfig,
    series: SubHourSeries,
}

fn config_error(path: &Path, e: Error) -> Error {
    match e {
        Error::InvalidInput(message) => Error::Config { path: path.to_path_buf(), message },
        other => other,
    }
}

fn load(io: &Io) -> Result<Loaded> {
    let cfg = match &io.config {
        Some(p) => SystemConfig::from_file(p).map_err(|e| config_error(p, e))?,
        None => SystemConfig::reference(),
    };
    let opts = ResampleOptions { gaps: if io.fill_gaps { GapPolicy::Zero } else { GapPolicy::Error }, ..Default::default() };
    let power = load_trace(&io.trace, TraceKind::Power)?;
    if power.empty {
        return Err(Error::Data(format!("{} holds no samples", io.trace.display())));
    }
    let mut series = resample_to_subhours(&power.samples, &cfg, &opts)?;
    if let Some(p) = &io.irradiance {
        let irr = load_trace(p, TraceKind::Irradiation)?;
        series = series.with_irradiation(&irr.samples, &opts)?;
    }
    Ok(Loaded { cfg, series })
}

fn load_model(path: &Path) -> Result<FittedModel> {
    FittedModel::from_file(path).map_err(|e| config_error(path, e))
}

/// Window start as a sub-hour index; `default` when `--from` is absent.
fn window_start(io: &Io, series: &SubHourSeries, default: usize) -> Result<usize> {
    let Some(raw) = &io.from else { return Ok(default) };
    let t = parse_instant(raw)?;
    let idx = series
        .index_of(t)
        .ok_or_else(|| Error::invalid(format!("--from {raw} lies outside the trace")))?;
    let aligned = series.start + (idx as f64 * series.slot_length_s) as i64;
    if aligned != t {
        log::warn!("--from {raw} is not on a sub-hour boundary; using {aligned}");
    }
    Ok(idx)
}

/// Number of whole frames from `start`: `--days`, or as many as fit.
fn frame_count(io: &Io, loaded: &Loaded, start: usize) -> Result<usize> {
    let k = loaded.cfg.slots_per_frame;
    let available = loaded.series.len().saturating_sub(start) / k;
    let frames = io.days.unwrap_or(available);
    if frames == 0 || frames > available {
        return Err(Error::invalid(format!(
            "window from sub-hour {start} holds {available} whole frame(s), {frames} requested"
        )));
    }
    Ok(frames)
}

fn default_online_start() -> usize {
    2 * DAY + DAY / 2
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(out)?;
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_report(out: &Path, report: &RunReport) -> Result<()> {
    let mut json = create(out, "report.json")?;
    report.write_json(&mut json)?;
    writeln!(json)?;
    json.flush()?;
    report.write_csv(create(out, "report.csv")?)
}

fn history(series: &SubHourSeries, range: std::ops::Range<usize>) -> SubHourSeries {
    let start = series.start + (range.start as f64 * series.slot_length_s) as i64;
    SubHourSeries { start, values: series.values[range].to_vec(), ..series.clone() }
}

fn fit_report(series: &SubHourSeries, method: FitMethod) -> Result<FitReport> {
    let report = fit_weights(series, WeightSet::INITIAL, method)?;
    if !report.converged {
        log::warn!("weight fit stopped before converging");
    }
    Ok(report)
}

/// Weights from `--weights`, else fitted on everything before `start`.
fn model_for(loaded: &Loaded, weights: Option<&Path>, start: usize) -> Result<FittedModel> {
    match weights {
        Some(p) => load_model(p),
        None => Ok(fit_report(&history(&loaded.series, 0..start), FitMethod::Newton)?.model()),
    }
}

fn require_history(start: usize) -> Result<()> {
    if start < 2 * DAY {
        return Err(Error::InsufficientHistory { needed: 2 * DAY, available: start });
    }
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    alpha1: f64,
    alpha2: f64,
    beta1: f64,
    sigma_w_sq: f64,
    sigma_v_sq: f64,
    objective_value: f64,
    iterations: usize,
    converged: bool,
    beta1_fixed: bool,
    subhours: usize,
}

fn fit(io: &Io, method: Method) -> Result<()> {
    let loaded = load(io)?;
    let start = window_start(io, &loaded.series, 0)?;
    let end = match io.days {
        Some(d) => (start + d * DAY).min(loaded.series.len()),
        None => loaded.series.len(),
    };
    let method = match method {
        Method::Newton => FitMethod::Newton,
        Method::Ols => FitMethod::Ols,
    };
    let report = fit_report(&history(&loaded.series, start..end), method)?;
    let model = report.model();
    let mut w = create(&io.out, "weights.txt")?;
    w.write_all(model.to_file_string().as_bytes())?;
    w.flush()?;
    write_json(
        &io.out,
        "fit_report.json",
        &FitSummary {
            alpha1: model.weights.alpha1,
            alpha2: model.weights.alpha2,
            beta1: model.weights.beta1,
            sigma_w_sq: model.noise.sigma_w_sq,
            sigma_v_sq: model.noise.sigma_v_sq,
            objective_value: report.objective_value,
            iterations: report.iterations,
            converged: report.converged,
            beta1_fixed: report.beta1_fixed,
            subhours: end - start,
        },
    )?;
    println!(
        "alpha1={} alpha2={} beta1={} sigma_w_sq={}",
        model.weights.alpha1, model.weights.alpha2, model.weights.beta1, model.noise.sigma_w_sq
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictSummary {
    from: usize,
    count: usize,
    ksep_mse_kj2: f64,
    ssep_mse_kj2: f64,
    daily_mse_kj2: Vec<(f64, f64)>,
}

fn predict(io: &Io, weights: Option<&Path>) -> Result<()> {
    let loaded = load(io)?;
    let start = window_start(io, &loaded.series, 2 * DAY)?;
    require_history(start)?;
    let count = match io.days {
        Some(d) => d * DAY,
        None => loaded.series.len().saturating_sub(start),
    };
    let model = model_for(&loaded, weights, start)?;
    let run = run_predictions(&loaded.series, &model, start, count)?;
    run.write_csv(create(&io.out, "predictions.csv")?)?;
    let summary = PredictSummary {
        from: start,
        count,
        ksep_mse_kj2: run.ksep_mse_kj2()?,
        ssep_mse_kj2: run.ssep_mse_kj2()?,
        daily_mse_kj2: run.daily_mse_kj2()?,
    };
    write_json(&io.out, "prediction_summary.json", &summary)?;
    println!("ksep_mse_kj2={} ssep_mse_kj2={}", summary.ksep_mse_kj2, summary.ssep_mse_kj2);
    Ok(())
}

fn write_schedule(out: &Path, name: &str, schedule: &Schedule, cfg: &SystemConfig) -> Result<()> {
    let mut w = create(out, name)?;
    schedule.write_csv(cfg, &mut w)?;
    w.flush()?;
    Ok(())
}

fn schedule(io: &Io, algo: Algorithm, restarts: usize) -> Result<()> {
    let loaded = load(io)?;
    let cfg = &loaded.cfg;
    let start = window_start(io, &loaded.series, default_online_start())?;
    let energies = loaded.series.frame(start, cfg.slots_per_frame)?;
    let schedule = match algo {
        Algorithm::Ptf => ptf_offline(&energies, cfg)?,
        Algorithm::SgTdma => sg_tdma(&energies, cfg)?,
        Algorithm::Bcd => {
            let trace = bcd_best_of(&energies, cfg, restarts, io.seed, &SolverOptions::default())?;
            let mut w = create(&io.out, "bcd_trace.csv")?;
            trace.write_csv(&mut w)?;
            w.flush()?;
            Schedule::from_allocation(trace.allocation, cfg)?
        }
        Algorithm::PtfOn => return Err(Error::invalid("ptfon is an online algorithm; use `simulate`")),
    };
    verify_schedule(&schedule, &energies, 0.0, cfg)?;
    write_schedule(&io.out, &format!("schedule_{}.csv", algo.name()), &schedule, cfg)?;
    let report = summarize_run(algo.name(), std::slice::from_ref(&schedule), None)?;
    write_report(&io.out, &report)?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &RunReport) {
    for s in &report.summaries {
        let fmt = |m: crate::metrics::Metric| m.value().map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        println!(
            "{}: frames={} mean_total_gb={:.3} mean_jain={} mean_log_utility={}",
            s.algorithm,
            s.frames,
            s.mean_total_gb,
            fmt(s.mean_jain_index),
            fmt(s.mean_log_utility)
        );
    }
}

/// Per-frame schedules and one-step prediction pairs.
struct OnlineResult {
    schedules: Vec<Schedule>,
    predictions: Option<Vec<Vec<(f64, f64)>>>,
}

fn run_online(
    loaded: &Loaded,
    algo: Algorithm,
    model: Option<&FittedModel>,
    start: usize,
    frames: usize,
    horizon: Horizon,
) -> Result<OnlineResult> {
    let cfg = &loaded.cfg;
    let k = cfg.slots_per_frame;
    match algo {
        Algorithm::PtfOn => {
            let model = model.ok_or_else(|| Error::invalid("PTF-On needs predictor weights"))?;
            let mut forecaster = KsepForecaster::new(*model);
            let run = ptfon_run(&loaded.series, start, frames, cfg, &mut forecaster, horizon.into())?;
            for f in &run.frames {
                verify_schedule(&f.schedule, &f.energies, f.carried_in_j, cfg)?;
            }
            let predictions = run.frames.iter().map(|f| f.next_slot_predictions.clone()).collect();
            Ok(OnlineResult {
                schedules: run.frames.into_iter().map(|f| f.schedule).collect(),
                predictions: Some(predictions),
            })
        }
        Algorithm::SgTdma | Algorithm::Ptf => {
            let mut schedules = Vec::with_capacity(frames);
            for f in 0..frames {
                let energies = loaded.series.frame(start + f * k, k)?;
                let s = if algo == Algorithm::Ptf { ptf_offline(&energies, cfg)? } else { sg_tdma(&energies, cfg)? };
                verify_schedule(&s, &energies, 0.0, cfg)?;
                schedules.push(s);
            }
            Ok(OnlineResult { schedules, predictions: None })
        }
        Algorithm::Bcd => Err(Error::invalid("bcd is an offline reference solver; use `schedule`")),
    }
}

fn simulate(io: &Io, algo: Algorithm, weights: Option<&Path>, horizon: Horizon) -> Result<()> {
    if !matches!(algo, Algorithm::PtfOn | Algorithm::SgTdma) {
        return Err(Error::invalid(format!("simulate runs ptfon or sgtdma, not {algo}")));
    }
    let loaded = load(io)?;
    let start = window_start(io, &loaded.series, default_online_start())?;
    let model = if algo == Algorithm::PtfOn {
        require_history(start)?;
        Some(model_for(&loaded, weights, start)?)
    } else {
        None
    };
    let frames = frame_count(io, &loaded, start)?;
    let result = run_online(&loaded, algo, model.as_ref(), start, frames, horizon)?;
    for (f, s) in result.schedules.iter().enumerate() {
        write_schedule(&io.out, &format!("schedule_{}_frame{f:02}.csv", algo.name()), s, &loaded.cfg)?;
    }
    let report = summarize_run(algo.name(), &result.schedules, result.predictions.as_deref())?;
    write_report(&io.out, &report)?;
    print_summary(&report);
    Ok(())
}

fn compare(io: &Io, weights: Option<&Path>, horizon: Horizon) -> Result<()> {
    let loaded = load(io)?;
    let start = window_start(io, &loaded.series, default_online_start())?;
    require_history(start)?;
    let model = model_for(&loaded, weights, start)?;
    let frames = frame_count(io, &loaded, start)?;
    let mut reports = Vec::new();
    for algo in [Algorithm::PtfOn, Algorithm::SgTdma, Algorithm::Ptf] {
        let r = run_online(&loaded, algo, Some(&model), start, frames, horizon)?;
        reports.push(summarize_run(algo.name(), &r.schedules, r.predictions.as_deref())?);
    }
    let report = RunReport::join(reports);
    write_report(&io.out, &report)?;
    print_summary(&report);
    Ok(())
}

fn generate(
    days: usize,
    seed: u64,
    out: &Path,
    sunny: bool,
    daily_energy_kj: f64,
    model_weights: Option<&[f64]>,
    model_noise: f64,
) -> Result<()> {
    let cfg = SystemConfig::reference();
    let (power, irradiation) = match model_weights {
        Some(&[alpha1, alpha2, beta1]) => {
            let w = WeightSet::new(alpha1, alpha2, beta1);
            let envelope: f64 =
                (0..DAY).map(|i| daylight_envelope((i as f64 + 0.5) * cfg.slot_length_s)).sum();
            let peak = daily_energy_kj * 1e3 / envelope;
            let series = model_series(w, model_noise, days, seed, cfg.slot_length_s, peak)?;
            (series.to_samples(), irradiation_samples(&series))
        }
        Some(_) => return Err(Error::invalid("--model-weights takes alpha1,alpha2,beta1")),
        None => {
            let base = if sunny { DiurnalOptions::sunny(days, seed) } else { DiurnalOptions { days, seed, ..Default::default() } };
            let mut trace = diurnal(&DiurnalOptions { daily_energy_j: daily_energy_kj * 1e3, ..base })?;
            trace.scale_to_daily_energy(daily_energy_kj * 1e3)?;
            (trace.power, trace.irradiation)
        }
    };
    write_trace(&power, create(out, "power.csv")?)?;
    write_trace(&irradiation, create(out, "irradiance.csv")?)?;
    println!("wrote {} samples to {}", power.len(), out.display());
    Ok(())
}
