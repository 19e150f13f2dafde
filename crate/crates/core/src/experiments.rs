//! Replicated simulation studies: estimator consistency and normality, the
//! detector's empirical size, and its power and delay under a parameter change.
//!
//! Every replication draws from its own stream keyed by the master seed, the
//! experiment, the cell and the replication index, so reports are identical
//! for any thread count.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration::{threshold_table, CalibrationA, CalibrationConfig, ThresholdTable, DEFAULT_GRID_M, DEFAULT_REPS};
use crate::error::{Error, Result};
use crate::estimation::{fit_mple, score_term, FitResult, SolverConfig};
use crate::linalg::Matrix;
use crate::model::{simulate_series_with, Init, ModelSpec, ParamVector, SeriesSample, Simulator, DEFAULT_BURN_IN};
use crate::monitoring::{MonitorConfig, MonitorState};
use crate::rng::{self, stream_id};

const TAG_CONSISTENCY: u8 = 1;
const TAG_NORMALITY: u8 = 2;
const TAG_SIZE: u8 = 3;
const TAG_POWER: u8 = 4;
const TAG_REFERENCE: u8 = 5;

/// Share of failed fits above which a cell is flagged.
pub const FAILURE_FLAG_RATE: f64 = 0.01;
/// Below this many fits the normality diagnostics are flagged as unreliable.
pub const MIN_NORMALITY_SAMPLE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeSpec {
    /// First monitored index generated under `new_beta` (1-based).
    pub at_k: usize,
    pub new_beta: ParamVector<f64>,
}

/// How `c(γ, α)` is obtained for the size and power studies.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdPlan {
    /// Monte-Carlo calibration with the given replications and grid.
    Calibrate { reps: usize, grid_m: usize },
    Table(ThresholdTable<f64>),
    /// One critical value for every cell (e.g. `+∞`).
    Fixed(f64),
}

/// Choice of `A` in the size and power studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentAPolicy {
    /// `A = Σ̂₀⁻¹` from one long reference series simulated under the null.
    Reference { length: usize },
    /// `A = Σ̂₀⁻¹` from each replication's own training fit.
    Training,
    Identity,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub spec: ModelSpec<f64>,
    pub m_list: Vec<usize>,
    pub reps: usize,
    pub gamma_list: Vec<f64>,
    pub alpha_list: Vec<f64>,
    pub horizon: f64,
    pub change: Option<ChangeSpec>,
    pub master_seed: u64,
    pub thresholds: ThresholdPlan,
    pub a_policy: ExperimentAPolicy,
    pub burn_in: usize,
    /// Statistic traces kept per cell for plotting (first replications only).
    pub trace_reps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec: ModelSpec::benchmark(),
            m_list: vec![100, 200, 300],
            reps: 1000,
            gamma_list: vec![0.0, 0.25, 0.4],
            alpha_list: vec![0.1, 0.05, 0.025, 0.01],
            horizon: 3.0,
            change: None,
            master_seed: 1,
            thresholds: ThresholdPlan::Calibrate {
                reps: DEFAULT_REPS,
                grid_m: DEFAULT_GRID_M,
            },
            a_policy: ExperimentAPolicy::Reference { length: 10_000 },
            burn_in: DEFAULT_BURN_IN,
            trace_reps: 0,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for the consistency study (`m ∈ {500, 1000, 1500}`, 100 replications).
    pub fn consistency() -> Self {
        Self {
            m_list: vec![500, 1000, 1500],
            reps: 100,
            ..Self::default()
        }
    }

    /// Defaults for the normality study (`m = 400`, 1000 replications).
    pub fn normality() -> Self {
        Self {
            m_list: vec![400],
            reps: 1000,
            ..Self::default()
        }
    }

    /// Defaults for the power study: `φ₁` moves from 0.1 to 0.2 at the 11th
    /// monitored observation, 500 replications, `α = 0.05`.
    pub fn power() -> Self {
        Self {
            reps: 500,
            alpha_list: vec![0.05],
            change: Some(ChangeSpec {
                at_k: 11,
                new_beta: ParamVector::new(-1.0, 0.2, &[0.4]),
            }),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.reps < 1 {
            return Err(Error::InvalidSpec("reps must be at least 1".into()));
        }
        if self.m_list.is_empty() {
            return Err(Error::InvalidSpec("m_list must not be empty".into()));
        }
        if self.m_list.len() > u16::MAX as usize {
            return Err(Error::InvalidSpec("too many m values".into()));
        }
        if let Some(ch) = &self.change {
            if ch.at_k < 1 {
                return Err(Error::InvalidSpec("change.at_k must be at least 1".into()));
            }
            if ch.new_beta.dim() != self.spec.beta.dim() {
                return Err(Error::Dimension {
                    expected: self.spec.beta.dim(),
                    got: ch.new_beta.dim(),
                });
            }
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidSpec("horizon N must be positive".into()));
        }
        Ok(())
    }

    fn solver(&self) -> SolverConfig<f64> {
        SolverConfig::default()
    }
}

fn failure_flag(failures: usize, total: usize) -> bool {
    total > 0 && failures as f64 > FAILURE_FLAG_RATE * total as f64
}

// ---------------------------------------------------------------------------
// consistency

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyCell {
    pub m: usize,
    /// Per-coordinate `(1/R) Σ (β̂_i − β₀_i)²` over successful fits.
    pub mse: Vec<f64>,
    pub fits: usize,
    pub failures: usize,
    pub failure_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub beta_true: Vec<f64>,
    pub reps: usize,
    pub master_seed: u64,
    pub cells: Vec<ConsistencyCell>,
}

fn simulate_and_fit(config: &ExperimentConfig, m: usize, stream: u64) -> Result<FitResult<f64>> {
    let mut rng = rng::stream(config.master_seed, stream);
    let s = simulate_series_with(&config.spec, m, Init::BurnIn(config.burn_in), &mut rng)?;
    fit_mple(&s, config.spec.n, &config.solver())
}

fn replicate_fits(config: &ExperimentConfig, tag: u8, cell: usize, m: usize) -> Vec<Option<Vec<f64>>> {
    (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| {
            simulate_and_fit(config, m, stream_id(tag, cell as u16, rep))
                .ok()
                .map(|f| f.beta_hat.as_slice().to_vec())
        })
        .collect()
}

pub fn run_consistency(config: &ExperimentConfig) -> Result<ConsistencyReport> {
    config.validate()?;
    let truth = config.spec.beta.as_slice().to_vec();
    let mut cells = Vec::with_capacity(config.m_list.len());
    for (ci, &m) in config.m_list.iter().enumerate() {
        let fits = replicate_fits(config, TAG_CONSISTENCY, ci, m);
        let ok: Vec<&Vec<f64>> = fits.iter().flatten().collect();
        let failures = fits.len() - ok.len();
        let mut mse = vec![0.0; truth.len()];
        for b in &ok {
            for (acc, (est, t)) in mse.iter_mut().zip(b.iter().zip(&truth)) {
                *acc += (est - t).powi(2);
            }
        }
        let denom = ok.len().max(1) as f64;
        mse.iter_mut().for_each(|v| *v /= denom);
        cells.push(ConsistencyCell {
            m,
            mse,
            fits: ok.len(),
            failures,
            failure_flag: failure_flag(failures, fits.len()),
        });
    }
    Ok(ConsistencyReport {
        beta_true: truth,
        reps: config.reps,
        master_seed: config.master_seed,
        cells,
    })
}

// ---------------------------------------------------------------------------
// normality

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateDiagnostics {
    pub mean: f64,
    pub sd: f64,
    /// Monte-Carlo standard error of the mean, `sd / √R`.
    pub mc_se: f64,
    pub skewness: f64,
    pub skewness_z: f64,
    pub excess_kurtosis: f64,
    pub kurtosis_z: f64,
    /// Correlation between sorted standardized estimates and normal quantiles.
    pub qq_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalityReport {
    pub m: usize,
    pub reps: usize,
    pub master_seed: u64,
    pub fits: usize,
    pub failures: usize,
    pub failure_flag: bool,
    pub insufficient_sample: bool,
    pub coordinates: Vec<CoordinateDiagnostics>,
    /// Raw `β̂` of every successful fit, one row per replication.
    #[serde(skip)]
    pub estimates: Vec<Vec<f64>>,
}

impl NormalityReport {
    pub fn mean(&self) -> Vec<f64> {
        self.coordinates.iter().map(|c| c.mean).collect()
    }
}

/// Moment and QQ diagnostics for one coordinate of a sample.
pub fn coordinate_diagnostics(values: &[f64]) -> CoordinateDiagnostics {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / r;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / r;
    let sd = if r > 1.0 { (m2 * r / (r - 1.0)).sqrt() } else { 0.0 };
    let skewness = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;
    CoordinateDiagnostics {
        mean,
        sd,
        mc_se: sd / r.sqrt(),
        skewness,
        skewness_z: skewness / (6.0 / r).sqrt(),
        excess_kurtosis,
        kurtosis_z: excess_kurtosis / (24.0 / r).sqrt(),
        qq_correlation: qq_correlation(values),
    }
}

/// Pearson correlation of the order statistics with Blom normal scores.
pub fn qq_correlation(values: &[f64]) -> f64 {
    let r = values.len();
    if r < 2 {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let normal = Normal::standard();
    let scores: Vec<f64> = (1..=r)
        .map(|i| normal.inverse_cdf((i as f64 - 0.375) / (r as f64 + 0.25)))
        .collect();
    pearson(&sorted, &scores)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

pub fn run_normality(config: &ExperimentConfig) -> Result<NormalityReport> {
    config.validate()?;
    let m = config.m_list[0];
    let fits = replicate_fits(config, TAG_NORMALITY, 0, m);
    let estimates: Vec<Vec<f64>> = fits.iter().flatten().cloned().collect();
    let failures = fits.len() - estimates.len();
    let dim = config.spec.beta.dim();
    let coordinates = (0..dim)
        .map(|i| {
            let col: Vec<f64> = estimates.iter().map(|b| b[i]).collect();
            coordinate_diagnostics(&col)
        })
        .collect();
    Ok(NormalityReport {
        m,
        reps: config.reps,
        master_seed: config.master_seed,
        fits: estimates.len(),
        failures,
        failure_flag: failure_flag(failures, fits.len()),
        insufficient_sample: estimates.len() < MIN_NORMALITY_SAMPLE,
        coordinates,
        estimates,
    })
}

// ---------------------------------------------------------------------------
// monitoring studies

/// Resolved `A` and thresholds shared by all replications of a study.
#[derive(Debug, Clone)]
pub struct MonitoringSetup {
    /// Fixed `A`, or `None` when each replication uses its training `Σ̂₀⁻¹`.
    pub a: Option<Matrix<f64>>,
    pub reference_sigma0: Option<Matrix<f64>>,
    pub thresholds: ThresholdTable<f64>,
}

impl MonitoringSetup {
    fn threshold(&self, gamma: f64, alpha: f64, horizon: f64) -> Result<f64> {
        self.thresholds.lookup_for(gamma, alpha, horizon)
    }
}

/// Builds `A` and the threshold table for the size and power studies.
pub fn prepare_monitoring(config: &ExperimentConfig) -> Result<MonitoringSetup> {
    config.validate()?;
    let dim = config.spec.beta.dim();
    let reference_sigma0 = match config.a_policy {
        ExperimentAPolicy::Reference { length } => {
            let fit = simulate_and_fit(config, length, stream_id(TAG_REFERENCE, 0, 0))?;
            Some(fit.sigma0_hat)
        }
        _ => None,
    };
    let a = match config.a_policy {
        ExperimentAPolicy::Reference { .. } => Some(reference_sigma0.as_ref().expect("reference fit").inverse_spd()?),
        ExperimentAPolicy::Training => None,
        ExperimentAPolicy::Identity => Some(Matrix::identity(dim)),
    };
    let thresholds = match &config.thresholds {
        ThresholdPlan::Table(t) => t.clone(),
        ThresholdPlan::Fixed(c) => ThresholdTable {
            entries: config
                .gamma_list
                .iter()
                .flat_map(|&g| {
                    config.alpha_list.iter().map(move |&a| crate::calibration::ThresholdEntry {
                        gamma: g,
                        alpha: a,
                        c: *c,
                        tail_warning: false,
                    })
                })
                .collect(),
            reps: 0,
            grid_m: 0,
            horizon: config.horizon,
            seed: config.master_seed,
        },
        ThresholdPlan::Calibrate { reps, grid_m } => {
            let (sigma, cal_a) = match config.a_policy {
                ExperimentAPolicy::Identity => {
                    // Identity A is not distribution-free; calibrate against the reference Σ̂₀.
                    let fit = simulate_and_fit(config, 10_000, stream_id(TAG_REFERENCE, 0, 0))?;
                    (fit.sigma0_hat, CalibrationA::Explicit(Matrix::identity(dim)))
                }
                _ => (
                    reference_sigma0.clone().unwrap_or_else(|| Matrix::identity(dim)),
                    CalibrationA::InverseSigma,
                ),
            };
            threshold_table(&CalibrationConfig {
                sigma,
                a: cal_a,
                horizon: config.horizon,
                grid_m: *grid_m,
                reps: *reps,
                gammas: config.gamma_list.clone(),
                alphas: config.alpha_list.clone(),
                master_seed: config.master_seed,
            })?
        }
    };
    Ok(MonitoringSetup {
        a,
        reference_sigma0,
        thresholds,
    })
}

/// One simulated replication: training window plus monitored stream.
struct Replication {
    training: SeriesSample<f64>,
    stream: Vec<(u32, Vec<f64>)>,
}

fn simulate_replication(config: &ExperimentConfig, m: usize, stream_len: usize, stream: u64) -> Result<Replication> {
    let mut rng = rng::stream(config.master_seed, stream);
    let spec = &config.spec;
    let mut sim = Simulator::new(spec, Init::BurnIn(config.burn_in), &mut rng)?;
    let mut x = Vec::with_capacity(m + 1);
    let mut w = Vec::with_capacity(m * spec.l());
    x.push(sim.current());
    for _ in 0..m {
        x.push(sim.step(&spec.beta, &mut rng, &mut w));
    }
    let training = SeriesSample::new(x, w, spec.l(), None)?;
    let mut out = Vec::with_capacity(stream_len);
    for k in 1..=stream_len {
        let beta = match &config.change {
            Some(ch) if k >= ch.at_k => &ch.new_beta,
            _ => &spec.beta,
        };
        let mut wk = Vec::with_capacity(spec.l());
        let xk = sim.step(beta, &mut rng, &mut wk);
        out.push((xk, wk));
    }
    Ok(Replication { training, stream: out })
}

fn replication_a(setup: &MonitoringSetup, fit: &FitResult<f64>) -> Result<Matrix<f64>> {
    match &setup.a {
        Some(a) => Ok(a.clone()),
        None => fit.sigma0_hat.inverse_spd(),
    }
}

fn monitor_history(
    config: &ExperimentConfig,
    fit: &FitResult<f64>,
    rep: &Replication,
    a: &Matrix<f64>,
    gamma: f64,
    alpha: f64,
    threshold_c: f64,
) -> Result<(Option<usize>, Vec<f64>)> {
    let mc = MonitorConfig {
        m: rep.training.len(),
        horizon: config.horizon,
        gamma,
        alpha,
        threshold_c,
        a: a.clone(),
    };
    let x_last = *rep.training.x().last().expect("nonempty");
    let mut state = MonitorState::new(fit.beta_hat.clone(), config.spec.n, x_last, mc)?;
    let res = state.run(rep.stream.iter().map(|(x, w)| (*x, w.as_slice())))?;
    Ok((res.alarm_at, res.statistic_history))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatisticTrace {
    pub m: usize,
    pub gamma: f64,
    pub rep: usize,
    pub statistics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeCell {
    pub m: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub reps_used: usize,
    pub failures: usize,
    pub failure_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    pub reps: usize,
    pub master_seed: u64,
    pub horizon: f64,
    pub cells: Vec<SizeCell>,
    #[serde(skip)]
    pub traces: Vec<StatisticTrace>,
}

impl SizeReport {
    pub fn cell(&self, m: usize, gamma: f64, alpha: f64) -> Option<&SizeCell> {
        self.cells
            .iter()
            .find(|c| c.m == m && (c.gamma - gamma).abs() < 1e-12 && (c.alpha - alpha).abs() < 1e-12)
    }
}

/// Per-γ supremum of one replication's statistic path, plus its kept trace.
type SizeRep = (f64, Vec<f64>);

pub fn run_size(config: &ExperimentConfig) -> Result<SizeReport> {
    let setup = prepare_monitoring(config)?;
    run_size_with(config, &setup)
}

/// Size study with a pre-built setup (lets callers share calibration work).
pub fn run_size_with(config: &ExperimentConfig, setup: &MonitoringSetup) -> Result<SizeReport> {
    config.validate()?;
    let mut cells = Vec::new();
    let mut traces = Vec::new();
    for (ci, &m) in config.m_list.iter().enumerate() {
        let stream_len = (config.horizon * m as f64).floor() as usize;
        // per replication: Some(sup statistic per γ, traces) or None on fit failure
        let per_rep: Vec<Option<Vec<SizeRep>>> = (0..config.reps as u64)
            .into_par_iter()
            .map(|r| -> Result<Option<Vec<SizeRep>>> {
                let rep = simulate_replication(config, m, stream_len, stream_id(TAG_SIZE, ci as u16, r))?;
                let Ok(fit) = fit_mple(&rep.training, config.spec.n, &config.solver()) else {
                    return Ok(None);
                };
                let Ok(a) = replication_a(setup, &fit) else {
                    return Ok(None);
                };
                let mut out = Vec::with_capacity(config.gamma_list.len());
                for &g in &config.gamma_list {
                    let alpha = config.alpha_list.first().copied().unwrap_or(0.05);
                    let (_, hist) = monitor_history(config, &fit, &rep, &a, g, alpha, f64::INFINITY)?;
                    let sup = hist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let keep = if (r as usize) < config.trace_reps { hist } else { Vec::new() };
                    out.push((sup, keep));
                }
                Ok(Some(out))
            })
            .collect::<Result<_>>()?;
        let failures = per_rep.iter().filter(|r| r.is_none()).count();
        let used = per_rep.len() - failures;
        for (gi, &g) in config.gamma_list.iter().enumerate() {
            for &alpha in &config.alpha_list {
                let c = setup.threshold(g, alpha, config.horizon)?;
                let rejections = per_rep.iter().flatten().filter(|v| v[gi].0 >= c).count();
                cells.push(SizeCell {
                    m,
                    gamma: g,
                    alpha,
                    threshold: c,
                    rejections,
                    rejection_rate: if used > 0 { rejections as f64 / used as f64 } else { f64::NAN },
                    reps_used: used,
                    failures,
                    failure_flag: failure_flag(failures, per_rep.len()),
                });
            }
            for (r, v) in per_rep.iter().enumerate().take(config.trace_reps) {
                if let Some(v) = v {
                    traces.push(StatisticTrace {
                        m,
                        gamma: g,
                        rep: r,
                        statistics: v[gi].1.clone(),
                    });
                }
            }
        }
    }
    Ok(SizeReport {
        reps: config.reps,
        master_seed: config.master_seed,
        horizon: config.horizon,
        cells,
        traces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerCell {
    pub m: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub detections: usize,
    pub detection_rate: f64,
    /// Mean first-passage index over detecting replications.
    pub mean_detection: f64,
    pub median_detection: f64,
    /// Average over replications of `(1/(k_end − k* + 1)) Σ_{k ≥ k*} G(X_{m+k}, β̂)`.
    pub post_change_drift: Vec<f64>,
    pub reps_used: usize,
    pub failures: usize,
    pub failure_flag: bool,
    /// Detection index per replication (`None` = no alarm or failed fit), in replication order.
    #[serde(skip)]
    pub detection_times: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerReport {
    pub reps: usize,
    pub master_seed: u64,
    pub horizon: f64,
    pub change_at: usize,
    pub new_beta: Vec<f64>,
    pub cells: Vec<PowerCell>,
    #[serde(skip)]
    pub traces: Vec<StatisticTrace>,
}

impl PowerReport {
    pub fn cell(&self, m: usize, gamma: f64, alpha: f64) -> Option<&PowerCell> {
        self.cells
            .iter()
            .find(|c| c.m == m && (c.gamma - gamma).abs() < 1e-12 && (c.alpha - alpha).abs() < 1e-12)
    }
}

pub fn run_power(config: &ExperimentConfig) -> Result<PowerReport> {
    let setup = prepare_monitoring(config)?;
    run_power_with(config, &setup)
}

type PowerRep = (Vec<Option<usize>>, Vec<Vec<f64>>, Vec<f64>);

pub fn run_power_with(config: &ExperimentConfig, setup: &MonitoringSetup) -> Result<PowerReport> {
    config.validate()?;
    let change = config
        .change
        .clone()
        .ok_or_else(|| Error::InvalidSpec("power study needs a change specification".into()))?;
    let n_cells = config.gamma_list.len() * config.alpha_list.len();
    let mut cells = Vec::new();
    let mut traces = Vec::new();
    for (ci, &m) in config.m_list.iter().enumerate() {
        let stream_len = (config.horizon * m as f64).floor() as usize;
        let per_rep: Vec<Option<PowerRep>> = (0..config.reps as u64)
            .into_par_iter()
            .map(|r| -> Result<Option<PowerRep>> {
                let rep = simulate_replication(config, m, stream_len, stream_id(TAG_POWER, ci as u16, r))?;
                let Ok(fit) = fit_mple(&rep.training, config.spec.n, &config.solver()) else {
                    return Ok(None);
                };
                let Ok(a) = replication_a(setup, &fit) else {
                    return Ok(None);
                };
                let mut alarms = Vec::with_capacity(n_cells);
                let mut hists = Vec::with_capacity(n_cells);
                for &g in &config.gamma_list {
                    for &alpha in &config.alpha_list {
                        let c = setup.threshold(g, alpha, config.horizon)?;
                        let (alarm, hist) = monitor_history(config, &fit, &rep, &a, g, alpha, c)?;
                        alarms.push(alarm);
                        hists.push(if (r as usize) < config.trace_reps { hist } else { Vec::new() });
                    }
                }
                let drift = post_change_drift(&fit, &rep, change.at_k, config.spec.n);
                Ok(Some((alarms, hists, drift)))
            })
            .collect::<Result<_>>()?;
        let failures = per_rep.iter().filter(|r| r.is_none()).count();
        let used = per_rep.len() - failures;
        let dim = config.spec.beta.dim();
        let mut drift = vec![0.0; dim];
        let mut drift_count = 0usize;
        for (_, _, d) in per_rep.iter().flatten() {
            if d.iter().all(|v| v.is_finite()) {
                drift.iter_mut().zip(d).for_each(|(a, b)| *a += b);
                drift_count += 1;
            }
        }
        drift.iter_mut().for_each(|v| *v /= drift_count.max(1) as f64);

        let mut idx = 0;
        for &g in &config.gamma_list {
            for &alpha in &config.alpha_list {
                let times: Vec<Option<usize>> = per_rep
                    .iter()
                    .map(|r| r.as_ref().and_then(|(al, _, _)| al[idx]))
                    .collect();
                let mut hits: Vec<usize> = times.iter().flatten().copied().collect();
                hits.sort_unstable();
                let detections = hits.len();
                let mean_detection = if detections > 0 {
                    hits.iter().sum::<usize>() as f64 / detections as f64
                } else {
                    f64::NAN
                };
                let median_detection = median_sorted(&hits);
                for (r, rep) in per_rep.iter().enumerate().take(config.trace_reps) {
                    if let Some((_, h, _)) = rep {
                        traces.push(StatisticTrace {
                            m,
                            gamma: g,
                            rep: r,
                            statistics: h[idx].clone(),
                        });
                    }
                }
                cells.push(PowerCell {
                    m,
                    gamma: g,
                    alpha,
                    threshold: setup.threshold(g, alpha, config.horizon)?,
                    detections,
                    detection_rate: if used > 0 { detections as f64 / used as f64 } else { f64::NAN },
                    mean_detection,
                    median_detection,
                    post_change_drift: drift.clone(),
                    reps_used: used,
                    failures,
                    failure_flag: failure_flag(failures, per_rep.len()),
                    detection_times: times,
                });
                idx += 1;
            }
        }
    }
    Ok(PowerReport {
        reps: config.reps,
        master_seed: config.master_seed,
        horizon: config.horizon,
        change_at: change.at_k,
        new_beta: change.new_beta.as_slice().to_vec(),
        cells,
        traces,
    })
}

fn median_sorted(v: &[usize]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2] as f64,
        n => (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0,
    }
}

/// Average post-change score `G(X_{m+k}, β̂)` over `k = at_k..=k_end`.
fn post_change_drift(fit: &FitResult<f64>, rep: &Replication, at_k: usize, n: u32) -> Vec<f64> {
    let dim = fit.beta_hat.dim();
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    let mut x_prev = *rep.training.x().last().expect("nonempty");
    for (k, (x, w)) in rep.stream.iter().enumerate() {
        if k + 1 >= at_k {
            let z = crate::model::build_regressor(x_prev, w);
            let g = score_term(&fit.beta_hat, &z, *x, n);
            acc.iter_mut().zip(&g.values).for_each(|(a, b)| *a += b);
            count += 1;
        }
        x_prev = *x;
    }
    if count == 0 {
        return vec![f64::NAN; dim];
    }
    acc.into_iter().map(|v| v / count as f64).collect()
}

// ---------------------------------------------------------------------------
// CSV emission

fn coef_names(dim: usize) -> Vec<String> {
    let mut names = vec!["phi0".to_string(), "phi1".to_string()];
    names.extend((1..dim - 1).map(|i| format!("gamma{i}")));
    names
}

impl ConsistencyReport {
    /// One row per `m`, columns `mse_<coef>`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let names = coef_names(self.beta_true.len());
        let mut header = vec!["m".to_string()];
        header.extend(names.iter().map(|n| format!("mse_{n}")));
        header.extend(["fits", "failures", "failure_flag"].map(String::from));
        wtr.write_record(&header)?;
        for c in &self.cells {
            let mut row = vec![c.m.to_string()];
            row.extend(c.mse.iter().map(|v| v.to_string()));
            row.extend([c.fits.to_string(), c.failures.to_string(), c.failure_flag.to_string()]);
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl NormalityReport {
    pub fn write_summary_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "coef",
            "mean",
            "sd",
            "mc_se",
            "skewness",
            "skewness_z",
            "excess_kurtosis",
            "kurtosis_z",
            "qq_correlation",
        ])?;
        for (name, c) in coef_names(self.coordinates.len()).iter().zip(&self.coordinates) {
            wtr.write_record([
                name.clone(),
                c.mean.to_string(),
                c.sd.to_string(),
                c.mc_se.to_string(),
                c.skewness.to_string(),
                c.skewness_z.to_string(),
                c.excess_kurtosis.to_string(),
                c.kurtosis_z.to_string(),
                c.qq_correlation.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Raw estimates, one row per successful replication.
    pub fn write_estimates_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string()];
        header.extend(coef_names(self.coordinates.len()));
        wtr.write_record(&header)?;
        for (i, b) in self.estimates.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(b.iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl SizeReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "gamma",
            "m",
            "alpha",
            "threshold",
            "rejection_rate",
            "rejections",
            "reps_used",
            "failures",
            "failure_flag",
        ])?;
        for c in &self.cells {
            wtr.write_record([
                c.gamma.to_string(),
                c.m.to_string(),
                c.alpha.to_string(),
                c.threshold.to_string(),
                c.rejection_rate.to_string(),
                c.rejections.to_string(),
                c.reps_used.to_string(),
                c.failures.to_string(),
                c.failure_flag.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl PowerReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let dim = self.new_beta.len();
        let mut header: Vec<String> = [
            "gamma",
            "m",
            "alpha",
            "threshold",
            "detection_rate",
            "detections",
            "mean_detection",
            "median_detection",
            "reps_used",
            "failures",
            "failure_flag",
        ]
        .map(String::from)
        .to_vec();
        header.extend(coef_names(dim).iter().map(|n| format!("drift_{n}")));
        wtr.write_record(&header)?;
        for c in &self.cells {
            let mut row = vec![
                c.gamma.to_string(),
                c.m.to_string(),
                c.alpha.to_string(),
                c.threshold.to_string(),
                c.detection_rate.to_string(),
                c.detections.to_string(),
                c.mean_detection.to_string(),
                c.median_detection.to_string(),
                c.reps_used.to_string(),
                c.failures.to_string(),
                c.failure_flag.to_string(),
            ];
            row.extend(c.post_change_drift.iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Long-format `m,gamma,rep,k,statistic` rows for external plotting.
pub fn write_traces_csv<W: std::io::Write>(traces: &[StatisticTrace], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["m", "gamma", "rep", "k", "statistic"])?;
    for t in traces {
        for (k, s) in t.statistics.iter().enumerate() {
            wtr.write_record([
                t.m.to_string(),
                t.gamma.to_string(),
                t.rep.to_string(),
                (k + 1).to_string(),
                s.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rep_mse_is_squared_error() {
        let cfg = ExperimentConfig {
            m_list: vec![300],
            reps: 1,
            master_seed: 3,
            ..ExperimentConfig::consistency()
        };
        let rep = run_consistency(&cfg).unwrap();
        let fit = simulate_and_fit(&cfg, 300, stream_id(TAG_CONSISTENCY, 0, 0)).unwrap();
        for (i, mse) in rep.cells[0].mse.iter().enumerate() {
            let err = fit.beta_hat.as_slice()[i] - cfg.spec.beta.as_slice()[i];
            assert_eq!(*mse, err * err);
        }
    }

    #[test]
    fn normality_flags_tiny_samples() {
        let cfg = ExperimentConfig {
            reps: 2,
            ..ExperimentConfig::normality()
        };
        let rep = run_normality(&cfg).unwrap();
        assert!(rep.insufficient_sample);
        assert_eq!(rep.estimates.len(), 2);
    }

    #[test]
    fn infinite_threshold_never_rejects() {
        let cfg = ExperimentConfig {
            m_list: vec![100],
            reps: 30,
            gamma_list: vec![0.0, 0.4],
            alpha_list: vec![0.05],
            thresholds: ThresholdPlan::Fixed(f64::INFINITY),
            a_policy: ExperimentAPolicy::Training,
            ..ExperimentConfig::default()
        };
        let rep = run_size(&cfg).unwrap();
        assert!(rep.cells.iter().all(|c| c.rejections == 0 && c.rejection_rate == 0.0));
    }

    #[test]
    fn power_requires_change() {
        let cfg = ExperimentConfig {
            thresholds: ThresholdPlan::Fixed(5.0),
            a_policy: ExperimentAPolicy::Identity,
            reps: 2,
            ..ExperimentConfig::default()
        };
        assert!(run_power(&cfg).is_err());
    }

    #[test]
    fn change_config_validated() {
        let mut cfg = ExperimentConfig::power();
        cfg.change.as_mut().unwrap().at_k = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::power();
        cfg.change.as_mut().unwrap().new_beta = ParamVector::new(0.0, 0.0, &[]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn qq_correlation_of_normal_scores_is_one() {
        let normal = Normal::standard();
        let v: Vec<f64> = (1..=200).map(|i| normal.inverse_cdf((i as f64 - 0.375) / 200.25)).collect();
        assert!((qq_correlation(&v) - 1.0).abs() < 1e-12);
        // a heavily skewed sample is clearly below
        let skewed: Vec<f64> = (1..=200).map(|i| (i as f64 / 20.0).exp()).collect();
        assert!(qq_correlation(&skewed) < 0.9);
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = ExperimentConfig {
            m_list: vec![100],
            reps: 20,
            gamma_list: vec![0.0],
            alpha_list: vec![0.05],
            thresholds: ThresholdPlan::Fixed(7.0),
            a_policy: ExperimentAPolicy::Training,
            ..ExperimentConfig::power()
        };
        let a = run_power(&cfg).unwrap();
        let b = run_power(&cfg).unwrap();
        assert_eq!(a, b);
    }
}
