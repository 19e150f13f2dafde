//! Binomial AR(1) count series: simulation, partial-likelihood estimation,
//! sequential change detection and threshold calibration.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32`/`f64`); the
//! aliases below pin it to `f64`, which is what the experiment, data-prep
//! and I/O layers use.

// `!(x > 0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the matrix formulas in linalg
#![allow(clippy::needless_range_loop)]

pub mod calibration;
pub mod dataprep;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod model;
pub mod monitoring;
pub mod rng;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use scalar::Real;

pub use calibration::{threshold_table, CalibrationA};
pub use estimation::{fit_mple, log_partial_likelihood, score, score_gradient, SolverConfig};
pub use model::{simulate_series, stationary_oracle, BaseDistribution, Init, Simulator};
pub use monitoring::{monitor_init, APolicy, MonitorSetup, ThresholdSource, WeightConfig};

pub type Matrix = linalg::Matrix<f64>;
pub type ParamVector = model::ParamVector<f64>;
pub type ExogenousSpec = model::ExogenousSpec<f64>;
pub type ModelSpec = model::ModelSpec<f64>;
pub type SeriesSample = model::SeriesSample<f64>;
pub type FitResult = estimation::FitResult<f64>;
pub type ScoreVector = estimation::ScoreVector<f64>;
pub type InfoMatrix = estimation::InfoMatrix<f64>;
pub type MonitorConfig = monitoring::MonitorConfig<f64>;
pub type MonitorState = monitoring::MonitorState<f64>;
pub type MonitorResult = monitoring::MonitorResult<f64>;
pub type CalibrationConfig = calibration::CalibrationConfig<f64>;
pub type ThresholdTable = calibration::ThresholdTable<f64>;
pub type ThresholdEntry = calibration::ThresholdEntry<f64>;
