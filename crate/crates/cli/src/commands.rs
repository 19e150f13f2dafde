use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use binar::calibration::{CalibrationA, CalibrationConfig};
use binar::dataprep::{self, RatePanel, Week53Policy, Window};
use binar::experiments::{self, ChangeSpec, ExperimentAPolicy, ExperimentConfig, ThresholdPlan};
use binar::io::{self, FitReport, MonitorLog, MonitorReport, StreamReader};
use binar::monitoring::{monitor_init, APolicy, MonitorResult, MonitorSetup, ThresholdSource};
use binar::{Init, Matrix, ParamVector, SeriesSample, SolverConfig};
use serde_json::json;

use crate::config::{CalibrateAKind, ExperimentAKind, MonitorAKind, Week53};
use crate::{CliError, Context, ExperimentKind};

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Writes an artifact through `f` and flushes it.
fn emit(
    ctx: &Context,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> binar::Result<()>,
) -> Result<(), CliError> {
    let path = ctx.out_path(name);
    let mut w = create(&path)?;
    f(&mut w)?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(())
}

fn read_series(path: &Path) -> Result<SeriesSample, CliError> {
    io::read_series_csv(open(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn model_n(ctx: &Context, explicit: Option<u32>) -> Result<u32, CliError> {
    match explicit {
        Some(n) => Ok(n),
        None => Ok(ctx.config.model_spec()?.0.n),
    }
}

pub fn simulate(ctx: &Context) -> Result<ExitCode, CliError> {
    let cfg = &ctx.config;
    let section = cfg.section(&cfg.simulate, "simulate")?;
    let (spec, burn_in) = cfg.model_spec()?;
    let series = binar::simulate_series(&spec, section.length, ctx.seed, Init::BurnIn(burn_in))?;
    emit(ctx, "series.csv", |w| io::write_series_csv(&series, w))?;
    ctx.say(format!("simulated {} transitions (seed {}) -> series.csv", section.length, ctx.seed));
    Ok(ExitCode::SUCCESS)
}

pub fn fit(ctx: &Context) -> Result<ExitCode, CliError> {
    let cfg = &ctx.config;
    let section = cfg.section(&cfg.fit, "fit")?;
    let mut series = read_series(&cfg.resolve(&section.series))?;
    if let Some(m) = section.m {
        series = series.prefix(m).map_err(|e| CliError::config("fit.m", e))?;
    }
    let n = model_n(ctx, section.n)?;
    let result = binar::fit_mple(&series, n, &SolverConfig::default())?;
    let report = FitReport::from(&result);
    emit(ctx, "fit.json", |w| io::write_json(&report, w))?;
    ctx.say(format!(
        "beta_hat = {:?} ({} iterations) -> fit.json",
        report.beta_hat, report.iterations
    ));
    Ok(ExitCode::SUCCESS)
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<Matrix, CliError> {
    Matrix::from_rows(rows).map_err(|e| CliError::config(field, e))
}

pub fn calibrate(ctx: &Context) -> Result<ExitCode, CliError> {
    let cfg = &ctx.config;
    let s = cfg.section(&cfg.calibrate, "calibrate")?;
    let sigma = match (&s.sigma, s.dim) {
        (Some(rows), _) => matrix(rows, "calibrate.sigma")?,
        (None, dim) => Matrix::identity(dim.unwrap_or(3)),
    };
    let a = match s.a {
        CalibrateAKind::InverseSigma => CalibrationA::InverseSigma,
        CalibrateAKind::Explicit => {
            let rows = s
                .a_matrix
                .as_ref()
                .ok_or_else(|| CliError::config("calibrate.a_matrix", "required when a = \"explicit\""))?;
            CalibrationA::Explicit(matrix(rows, "calibrate.a_matrix")?)
        }
    };
    let config = CalibrationConfig {
        sigma,
        a,
        horizon: s.horizon,
        grid_m: s.grid_m,
        reps: s.reps,
        gammas: s.gammas.clone(),
        alphas: s.alphas.clone(),
        master_seed: ctx.seed,
    };
    config.validate().map_err(|e| CliError::config("calibrate", e))?;
    let table = binar::threshold_table(&config)?;
    emit(ctx, "thresholds.csv", |w| io::write_threshold_csv(&table, w))?;
    for e in &table.entries {
        ctx.say(format!(
            "gamma={} alpha={} c={}{}",
            e.gamma,
            e.alpha,
            e.c,
            if e.tail_warning { " (few tail samples)" } else { "" }
        ));
    }
    Ok(ExitCode::SUCCESS)
}

/// Monitored `(x, w)` pairs in arrival order.
type Stream = Vec<(u32, Vec<f64>)>;

pub fn monitor(ctx: &Context) -> Result<ExitCode, CliError> {
    let cfg = &ctx.config;
    let s = cfg.section(&cfg.monitor, "monitor")?;
    let n = model_n(ctx, s.n)?;

    let (training, tail): (SeriesSample, Option<Stream>) = match (&s.training, &s.series) {
        (Some(t), None) => (read_series(&cfg.resolve(t))?, None),
        (None, Some(p)) => {
            let full = read_series(&cfg.resolve(p))?;
            let m = s.m.ok_or_else(|| CliError::config("monitor.m", "required with monitor.series"))?;
            let training = full.prefix(m).map_err(|e| CliError::config("monitor.m", e))?;
            (training, Some(full.suffix_stream(m)))
        }
        _ => {
            return Err(CliError::config(
                "monitor",
                "set exactly one of `training` (with `stream`) or `series` (with `m`)",
            ))
        }
    };

    let table = match &s.threshold_table {
        Some(p) => {
            let path = cfg.resolve(p);
            Some(io::read_threshold_csv(open(&path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let threshold = match (&s.threshold, &table) {
        (Some(v), None) => ThresholdSource::Value(v.value()?),
        (None, Some(t)) => ThresholdSource::Table(t),
        _ => {
            return Err(CliError::config(
                "monitor",
                "set exactly one of `threshold` or `threshold_table`",
            ))
        }
    };
    let setup = MonitorSetup {
        horizon: s.horizon,
        gamma: s.gamma,
        alpha: s.alpha,
        a_policy: match s.a {
            MonitorAKind::InverseSigma0 => APolicy::InverseSigma0,
            MonitorAKind::Identity => APolicy::Identity,
        },
        threshold,
        solver: SolverConfig::default(),
    };
    let (mut state, fit) = monitor_init(&training, n, &setup)?;
    let c = state.config().threshold_c;

    let stream: Box<dyn Iterator<Item = binar::Result<(u32, Vec<f64>)>>> = match (tail, &s.stream) {
        (Some(v), None) => Box::new(v.into_iter().map(Ok)),
        (None, Some(p)) => {
            let path = cfg.resolve(p);
            Box::new(StreamReader::new(open(&path)?)?)
        }
        _ => {
            return Err(CliError::config(
                "monitor.stream",
                "required with `training` and not allowed with `series`",
            ))
        }
    };

    let log_path = ctx.out_path("monitor_log.csv");
    let mut log = MonitorLog::new(create(&log_path)?)?;
    for item in stream {
        if state.is_terminated() {
            break;
        }
        let (x, w) = item?;
        let stat = state.update(x, &w)?;
        log.record(state.k(), stat, c, state.alarm_at().is_some())?;
    }
    drop(log);
    let result = MonitorResult {
        alarm_at: state.alarm_at(),
        statistic_history: state.statistic_history().to_vec(),
        truncated: state.alarm_at().is_none() && state.k() < state.config().max_k(),
    };
    let report = MonitorReport::from_result(
        &result,
        training.len(),
        s.horizon,
        s.gamma,
        s.alpha,
        c,
        fit.beta_hat.as_slice(),
    );
    emit(ctx, "monitor.json", |w| io::write_json(&report, w))?;
    match result.alarm_at {
        Some(k) => {
            ctx.say(format!("alarm at k = {k}"));
            Ok(ExitCode::from(3))
        }
        None => {
            ctx.say(format!(
                "no alarm in {} observations{}",
                result.statistic_history.len(),
                if result.truncated { " (stream ended before the horizon)" } else { "" }
            ));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn experiment_config(ctx: &Context, kind: ExperimentKind) -> Result<ExperimentConfig, CliError> {
    let cfg = &ctx.config;
    let s = cfg.experiment.clone().unwrap_or_default();
    let (spec, burn_in) = cfg.model_spec()?;
    let mut e = match kind {
        ExperimentKind::Consistency => ExperimentConfig::consistency(),
        ExperimentKind::Normality => ExperimentConfig::normality(),
        ExperimentKind::Size => ExperimentConfig::default(),
        ExperimentKind::Power => ExperimentConfig::power(),
    };
    e.spec = spec;
    e.burn_in = burn_in;
    e.master_seed = ctx.seed;
    if let Some(v) = s.m_list {
        e.m_list = v;
    }
    if let Some(v) = s.reps {
        e.reps = v;
    }
    if let Some(v) = s.gammas {
        e.gamma_list = v;
    }
    if let Some(v) = s.alphas {
        e.alpha_list = v;
    }
    if let Some(v) = s.horizon {
        e.horizon = v;
    }
    if let Some(v) = s.trace_reps {
        e.trace_reps = v;
    }
    e.a_policy = match s.a.unwrap_or(ExperimentAKind::Reference) {
        ExperimentAKind::Reference => ExperimentAPolicy::Reference {
            length: s.reference_length.unwrap_or(10_000),
        },
        ExperimentAKind::Training => ExperimentAPolicy::Training,
        ExperimentAKind::Identity => ExperimentAPolicy::Identity,
    };
    e.thresholds = match (&s.threshold, &s.threshold_table) {
        (Some(_), Some(_)) => {
            return Err(CliError::config(
                "experiment",
                "`threshold` and `threshold_table` are mutually exclusive",
            ))
        }
        (Some(v), None) => ThresholdPlan::Fixed(v.value()?),
        (None, Some(p)) => {
            let path = cfg.resolve(p);
            ThresholdPlan::Table(
                io::read_threshold_csv(open(&path)?).map_err(|err| CliError::Usage(format!("{}: {err}", path.display())))?,
            )
        }
        (None, None) => ThresholdPlan::Calibrate {
            reps: s.calibration_reps.unwrap_or(binar::calibration::DEFAULT_REPS),
            grid_m: s.calibration_grid_m.unwrap_or(binar::calibration::DEFAULT_GRID_M),
        },
    };
    if s.change_at.is_some() || s.change_beta.is_some() {
        let base = e.change.clone();
        let at_k = s
            .change_at
            .or(base.as_ref().map(|c| c.at_k))
            .ok_or_else(|| CliError::config("experiment.change_at", "required with change_beta"))?;
        let new_beta = match s.change_beta {
            Some(b) => ParamVector::from_slice(&b).map_err(|err| CliError::config("experiment.change_beta", err))?,
            None => base
                .map(|c| c.new_beta)
                .ok_or_else(|| CliError::config("experiment.change_beta", "required with change_at"))?,
        };
        e.change = Some(ChangeSpec { at_k, new_beta });
    }
    e.validate().map_err(|err| CliError::config("experiment", err))?;
    Ok(e)
}

fn config_echo(e: &ExperimentConfig, kind: ExperimentKind) -> serde_json::Value {
    json!({
        "experiment": format!("{kind:?}").to_lowercase(),
        "master_seed": e.master_seed,
        "n": e.spec.n,
        "beta": e.spec.beta.as_slice(),
        "burn_in": e.burn_in,
        "m_list": e.m_list,
        "reps": e.reps,
        "gammas": e.gamma_list,
        "alphas": e.alpha_list,
        "horizon": e.horizon,
        "a_policy": format!("{:?}", e.a_policy),
        "change": e.change.as_ref().map(|c| json!({"at_k": c.at_k, "new_beta": c.new_beta.as_slice()})),
    })
}

pub fn experiment(ctx: &Context, kind: ExperimentKind) -> Result<ExitCode, CliError> {
    let e = experiment_config(ctx, kind)?;
    let mut meta = config_echo(&e, kind);
    match kind {
        ExperimentKind::Consistency => {
            let r = experiments::run_consistency(&e)?;
            emit(ctx, "consistency.csv", |w| r.write_csv(w))?;
            meta["report"] = serde_json::to_value(&r).map_err(binar::Error::from)?;
            emit(ctx, "consistency.json", |w| io::write_json(&meta, w))?;
            for c in &r.cells {
                ctx.say(format!("m={} mse={:?} failures={}", c.m, c.mse, c.failures));
            }
        }
        ExperimentKind::Normality => {
            let r = experiments::run_normality(&e)?;
            emit(ctx, "normality.csv", |w| r.write_summary_csv(w))?;
            emit(ctx, "normality_estimates.csv", |w| r.write_estimates_csv(w))?;
            meta["report"] = serde_json::to_value(&r).map_err(binar::Error::from)?;
            emit(ctx, "normality.json", |w| io::write_json(&meta, w))?;
            ctx.say(format!("m={} mean beta_hat={:?}", r.m, r.mean()));
        }
        ExperimentKind::Size => {
            let r = experiments::run_size(&e)?;
            emit(ctx, "size.csv", |w| r.write_csv(w))?;
            if !r.traces.is_empty() {
                emit(ctx, "size_traces.csv", |w| experiments::write_traces_csv(&r.traces, w))?;
            }
            meta["report"] = serde_json::to_value(&r).map_err(binar::Error::from)?;
            emit(ctx, "size.json", |w| io::write_json(&meta, w))?;
            for c in &r.cells {
                ctx.say(format!(
                    "m={} gamma={} alpha={} rejection_rate={}",
                    c.m, c.gamma, c.alpha, c.rejection_rate
                ));
            }
        }
        ExperimentKind::Power => {
            let r = experiments::run_power(&e)?;
            emit(ctx, "power.csv", |w| r.write_csv(w))?;
            if !r.traces.is_empty() {
                emit(ctx, "power_traces.csv", |w| experiments::write_traces_csv(&r.traces, w))?;
            }
            meta["report"] = serde_json::to_value(&r).map_err(binar::Error::from)?;
            emit(ctx, "power.json", |w| io::write_json(&meta, w))?;
            for c in &r.cells {
                ctx.say(format!(
                    "m={} gamma={} alpha={} detection_rate={} mean_detection={}",
                    c.m, c.gamma, c.alpha, c.detection_rate, c.mean_detection
                ));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn prep(ctx: &Context) -> Result<ExitCode, CliError> {
    let cfg = &ctx.config;
    let s = cfg.section(&cfg.prep, "prep")?;
    let path = cfg.resolve(&s.rates);
    let panel = RatePanel::read_csv(open(&path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let years: BTreeSet<i32> = s.baseline_years.iter().copied().collect();
    let policy = match s.week53 {
        Week53::Strict => Week53Policy::Strict,
        Week53::UseWeek52 => Week53Policy::UseWeek52,
    };
    let baseline = dataprep::compute_baseline_with(&panel, &years, policy)?;
    let states = s.states.clone().unwrap_or_else(|| panel.states());
    let window = Window {
        start: s.window_start,
        end: s.window_end,
    };
    let series = dataprep::binarize_and_sum(&panel, &baseline, &states, window)?;
    emit(ctx, "binomial_series.csv", |w| series.write_csv(w))?;
    ctx.say(format!(
        "{} weeks, n = {} states -> binomial_series.csv",
        series.len(),
        series.n
    ));
    Ok(ExitCode::SUCCESS)
}

pub fn compare(ctx: &Context) -> Result<ExitCode, CliError> {
    let cfg = &ctx.config;
    let s = cfg.section(&cfg.compare, "compare")?;
    let path = cfg.resolve(&s.series);
    let series = dataprep::BinomialSeries::read_csv(open(&path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let cmp = dataprep::model_comparison(&series)?;
    let report = cmp.to_report();
    emit(ctx, "comparison.txt", |w| Ok(w.write_all(report.as_bytes())?))?;
    ctx.say(report.trim_end());
    Ok(ExitCode::SUCCESS)
}
