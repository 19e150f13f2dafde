//! TOML run configuration shared by every subcommand.
//!
//! Each subcommand reads its own table (`[simulate]`, `[monitor]`, …) plus the
//! shared `[model]` table where relevant. Relative paths are resolved against
//! the directory containing the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub model: Option<ModelSection>,
    pub simulate: Option<SimulateSection>,
    pub fit: Option<FitSection>,
    pub calibrate: Option<CalibrateSection>,
    pub monitor: Option<MonitorSection>,
    pub experiment: Option<ExperimentSection>,
    pub prep: Option<PrepSection>,
    pub compare: Option<CompareSection>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n: u32,
    pub beta: Vec<f64>,
    pub exo: Option<ExoSection>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    binar::model::DEFAULT_BURN_IN
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExoSection {
    #[serde(default = "default_dist")]
    pub dist: String,
    pub mean: f64,
    pub sd: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

fn default_dist() -> String {
    "normal".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Number of transitions `T`; the file holds `T + 1` rows.
    pub length: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub series: PathBuf,
    /// Fit only the first `m` transitions.
    pub m: Option<usize>,
    pub n: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrateAKind {
    InverseSigma,
    Explicit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    /// Covariance of the Brownian increments; identity of size `dim` if absent.
    pub sigma: Option<Vec<Vec<f64>>>,
    pub dim: Option<usize>,
    #[serde(default = "default_calibrate_a")]
    pub a: CalibrateAKind,
    pub a_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_grid_m")]
    pub grid_m: usize,
    #[serde(default = "default_cal_reps")]
    pub reps: usize,
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

fn default_calibrate_a() -> CalibrateAKind {
    CalibrateAKind::InverseSigma
}
fn default_horizon() -> f64 {
    3.0
}
fn default_grid_m() -> usize {
    binar::calibration::DEFAULT_GRID_M
}
fn default_cal_reps() -> usize {
    binar::calibration::DEFAULT_REPS
}
fn default_gammas() -> Vec<f64> {
    vec![0.0, 0.25, 0.4]
}
fn default_alphas() -> Vec<f64> {
    vec![0.1, 0.05, 0.025, 0.01]
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorAKind {
    InverseSigma0,
    Identity,
}

/// A number or the string `"inf"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ThresholdValue {
    Number(f64),
    Text(String),
}

impl ThresholdValue {
    pub fn value(&self) -> Result<f64, CliError> {
        match self {
            ThresholdValue::Number(v) => Ok(*v),
            ThresholdValue::Text(s) if matches!(s.as_str(), "inf" | "+inf" | "infinity") => Ok(f64::INFINITY),
            ThresholdValue::Text(s) => Err(CliError::config("monitor.threshold", format!("expected a number or \"inf\", got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    /// Training window as a series CSV.
    pub training: Option<PathBuf>,
    /// Monitored observations as a `k,x,w..` CSV.
    pub stream: Option<PathBuf>,
    /// Alternatively one series CSV split after `m` transitions.
    pub series: Option<PathBuf>,
    pub m: Option<usize>,
    pub n: Option<u32>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub threshold: Option<ThresholdValue>,
    pub threshold_table: Option<PathBuf>,
    #[serde(default = "default_monitor_a")]
    pub a: MonitorAKind,
}

fn default_monitor_a() -> MonitorAKind {
    MonitorAKind::InverseSigma0
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentAKind {
    Reference,
    Training,
    Identity,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub m_list: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub gammas: Option<Vec<f64>>,
    pub alphas: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub a: Option<ExperimentAKind>,
    pub reference_length: Option<usize>,
    /// Fixed critical value for every cell (number or `"inf"`).
    pub threshold: Option<ThresholdValue>,
    pub threshold_table: Option<PathBuf>,
    pub calibration_reps: Option<usize>,
    pub calibration_grid_m: Option<usize>,
    pub change_at: Option<usize>,
    pub change_beta: Option<Vec<f64>>,
    pub trace_reps: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Week53 {
    #[default]
    Strict,
    UseWeek52,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepSection {
    pub rates: PathBuf,
    pub baseline_years: Vec<i32>,
    /// Ordered state list; every state in the panel if absent.
    pub states: Option<Vec<String>>,
    /// `[iso_year, week]`, inclusive.
    pub window_start: (i32, u32),
    pub window_end: (i32, u32),
    #[serde(default)]
    pub week53: Week53,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub series: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("config: missing [{name}] table")))
    }

    /// `[model]` as a validated spec; the benchmark spec if the table is absent.
    pub fn model_spec(&self) -> Result<(binar::ModelSpec, usize), CliError> {
        let Some(m) = &self.model else {
            return Ok((binar::ModelSpec::benchmark(), binar::model::DEFAULT_BURN_IN));
        };
        if m.beta.len() < 2 {
            return Err(CliError::config("model.beta", "needs at least (phi0, phi1)"));
        }
        let beta = binar::ParamVector::from_slice(&m.beta).map_err(|e| CliError::config("model.beta", e))?;
        let l = m.beta.len() - 2;
        let exo = match (&m.exo, l) {
            (_, 0) => binar::ExogenousSpec::none(),
            (None, _) => return Err(CliError::config("model.exo", "required when beta has exogenous coefficients")),
            (Some(e), l) => {
                if e.dist != "normal" {
                    return Err(CliError::config("model.exo.dist", format!("unsupported distribution `{}`", e.dist)));
                }
                binar::ExogenousSpec::new(
                    binar::BaseDistribution::Normal { mean: e.mean, sd: e.sd },
                    e.clamp_lo,
                    e.clamp_hi,
                    l,
                )
                .map_err(|err| CliError::config("model.exo", err))?
            }
        };
        let spec = binar::ModelSpec::new(m.n, beta, exo).map_err(|e| CliError::config("model", e))?;
        Ok((spec, m.burn_in))
    }
}
