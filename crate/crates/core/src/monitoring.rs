//! Close-end sequential monitoring for a parameter change.
//!
//! After fitting `β̂` on the first `m` observations, each new observation adds
//! its score term `G(X_t, β̂)` to the running sum `S(m, k)`, and the detector
//! raises an alarm at the first `k ≤ Nm` with
//! `ω²(m, k) S(m, k)ᵀ A S(m, k) ≥ c`.

use std::fmt::Debug;

use crate::calibration::ThresholdTable;
use crate::error::{Error, Result};
use crate::estimation::{fit_mple, score, score_term, FitResult, SolverConfig};
use crate::linalg::Matrix;
use crate::model::{build_regressor, ParamVector, SeriesSample};
use crate::scalar::Real;

/// `ρ(s, γ) = s^{−γ}(s + 1)^{γ−1}`.
pub fn rho<T: Real>(s: T, gamma: T) -> Result<T> {
    if !(s > T::zero()) {
        return Err(Error::Domain(format!("rho needs s > 0, got {s}")));
    }
    Ok(rho_unchecked(s, gamma))
}

#[inline]
pub(crate) fn rho_unchecked<T: Real>(s: T, gamma: T) -> T {
    s.powf(-gamma) * (s + T::one()).powf(gamma - T::one())
}

/// `ω(m, k, γ) = m^{−1/2}(1 + k/m)^{−1}(k/(m + k))^{−γ}`.
pub fn weight<T: Real>(m: usize, k: usize, gamma: T) -> Result<T> {
    if m < 1 {
        return Err(Error::Domain("weight needs m >= 1".into()));
    }
    if k < 1 {
        return Err(Error::Domain("weight needs k >= 1; the statistic is undefined at k = 0".into()));
    }
    let mf = T::from_usize(m).expect("usize to float");
    let kf = T::from_usize(k).expect("usize to float");
    Ok(mf.sqrt().recip() * (T::one() + kf / mf).recip() * (kf / (mf + kf)).powf(-gamma))
}

/// A weight profile `ρ(s)`; the monitor uses `ω(m, k) = m^{−1/2} ρ(k/m)`.
pub trait WeightFunction<T>: Clone + Debug + Send + Sync {
    fn rho(&self, s: T) -> T;

    fn weight(&self, m: usize, k: usize) -> T
    where
        T: Real,
    {
        let mf = T::from_usize(m).expect("usize to float");
        let s = T::from_usize(k).expect("usize to float") / mf;
        self.rho(s) / mf.sqrt()
    }
}

/// The standard profile `ρ(s, γ) = s^{−γ}(s + 1)^{γ−1}` with `0 ≤ γ < 1/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightConfig<T> {
    gamma: T,
}

impl<T: Real> WeightConfig<T> {
    pub fn new(gamma: T) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }
}

impl<T: Real> WeightFunction<T> for WeightConfig<T> {
    fn rho(&self, s: T) -> T {
        rho_unchecked(s, self.gamma)
    }
}

pub(crate) fn check_gamma<T: Real>(gamma: T) -> Result<()> {
    if !(gamma >= T::zero() && gamma < T::lit(0.5)) {
        return Err(Error::Domain(format!("gamma must lie in [0, 0.5), got {gamma}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorConfig<T> {
    /// Training length.
    pub m: usize,
    /// Horizon multiplier; monitoring stops at `k = ⌊N m⌋`.
    pub horizon: T,
    pub gamma: T,
    pub alpha: T,
    /// Critical value; `+∞` disables alarms.
    pub threshold_c: T,
    pub a: Matrix<T>,
}

impl<T: Real> MonitorConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidSpec("training length m must be positive".into()));
        }
        if !(self.horizon > T::zero()) || !self.horizon.is_finite() {
            return Err(Error::InvalidSpec(format!("horizon N must be positive, got {}", self.horizon)));
        }
        check_gamma(self.gamma)?;
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return Err(Error::InvalidSpec(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.threshold_c > T::zero()) {
            return Err(Error::InvalidSpec(format!("threshold must be positive, got {}", self.threshold_c)));
        }
        if !self.a.is_symmetric(T::lit(1e-10)) {
            return Err(Error::InvalidSpec("A must be symmetric".into()));
        }
        self.a.cholesky().map_err(|_| Error::InvalidSpec("A must be positive definite".into()))?;
        Ok(())
    }

    /// Last monitored index `⌊N m⌋`.
    pub fn max_k(&self) -> usize {
        (self.horizon * T::from_usize(self.m).expect("usize to float"))
            .floor()
            .to_usize()
            .unwrap_or(0)
    }
}

/// How the quadratic-form matrix `A` is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum APolicy<T> {
    /// `A = Σ̂₀⁻¹` from the training fit.
    InverseSigma0,
    Identity,
    Fixed(Matrix<T>),
}

/// Where the critical value comes from.
#[derive(Debug, Clone, Copy)]
pub enum ThresholdSource<'a, T> {
    Value(T),
    Table(&'a ThresholdTable<T>),
}

#[derive(Debug, Clone)]
pub struct MonitorSetup<'a, T> {
    pub horizon: T,
    pub gamma: T,
    pub alpha: T,
    pub a_policy: APolicy<T>,
    pub threshold: ThresholdSource<'a, T>,
    pub solver: SolverConfig<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorResult<T> {
    pub alarm_at: Option<usize>,
    pub statistic_history: Vec<T>,
    /// The stream ended before the horizon without an alarm.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct MonitorState<T, W = WeightConfig<T>> {
    beta_hat: ParamVector<T>,
    n: u32,
    config: MonitorConfig<T>,
    weight: W,
    k: usize,
    running_sum: Vec<T>,
    statistic_history: Vec<T>,
    alarm_at: Option<usize>,
    x_prev: u32,
}

/// Fits `β̂` on the training window and prepares a fresh monitor.
pub fn monitor_init<T: Real>(
    training: &SeriesSample<T>,
    n: u32,
    setup: &MonitorSetup<'_, T>,
) -> Result<(MonitorState<T>, FitResult<T>)> {
    let fit = fit_mple(training, n, &setup.solver)?;
    // The training scores must sum to zero at β̂.
    let g = score(training, n, &fit.beta_hat)?;
    if !(g.sup_norm() < setup.solver.score_tol) {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            score_norm: g.sup_norm().as_f64(),
        });
    }
    let dim = fit.beta_hat.dim();
    let a = match &setup.a_policy {
        APolicy::InverseSigma0 => fit.sigma0_hat.inverse_spd()?,
        APolicy::Identity => Matrix::identity(dim),
        APolicy::Fixed(a) => {
            if a.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: a.dim(),
                });
            }
            a.clone()
        }
    };
    let threshold_c = match setup.threshold {
        ThresholdSource::Value(c) => c,
        ThresholdSource::Table(table) => table.lookup_for(setup.gamma, setup.alpha, setup.horizon)?,
    };
    let config = MonitorConfig {
        m: training.len(),
        horizon: setup.horizon,
        gamma: setup.gamma,
        alpha: setup.alpha,
        threshold_c,
        a,
    };
    let x_last = *training.x().last().expect("nonempty series");
    let state = MonitorState::new(fit.beta_hat.clone(), n, x_last, config)?;
    Ok((state, fit))
}

impl<T: Real> MonitorState<T> {
    /// Monitor with the standard weight profile for `config.gamma`.
    pub fn new(beta_hat: ParamVector<T>, n: u32, x_last: u32, config: MonitorConfig<T>) -> Result<Self> {
        let weight = WeightConfig::new(config.gamma)?;
        Self::with_weight(beta_hat, n, x_last, config, weight)
    }
}

impl<T: Real, W: WeightFunction<T>> MonitorState<T, W> {
    /// Monitor with a custom weight profile; `config.gamma` is then informational.
    pub fn with_weight(beta_hat: ParamVector<T>, n: u32, x_last: u32, config: MonitorConfig<T>, weight: W) -> Result<Self> {
        config.validate()?;
        if config.a.dim() != beta_hat.dim() {
            return Err(Error::Dimension {
                expected: beta_hat.dim(),
                got: config.a.dim(),
            });
        }
        if x_last > n {
            return Err(Error::Domain(format!("last training value {x_last} exceeds n = {n}")));
        }
        let dim = beta_hat.dim();
        Ok(Self {
            beta_hat,
            n,
            config,
            weight,
            k: 0,
            running_sum: vec![T::zero(); dim],
            statistic_history: Vec::new(),
            alarm_at: None,
            x_prev: x_last,
        })
    }

    pub fn beta_hat(&self) -> &ParamVector<T> {
        &self.beta_hat
    }

    pub fn config(&self) -> &MonitorConfig<T> {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `S(m, k)`.
    pub fn running_sum(&self) -> &[T] {
        &self.running_sum
    }

    pub fn statistic_history(&self) -> &[T] {
        &self.statistic_history
    }

    pub fn alarm_at(&self) -> Option<usize> {
        self.alarm_at
    }

    pub fn is_terminated(&self) -> bool {
        self.alarm_at.is_some() || self.k >= self.config.max_k()
    }

    /// Consumes `(X_{m+k+1}, W_{m+k+1})` and returns the new statistic.
    pub fn update(&mut self, x_new: u32, w_new: &[T]) -> Result<T> {
        if self.alarm_at.is_some() {
            return Err(Error::MonitorTerminated("an alarm has already been raised"));
        }
        if self.k >= self.config.max_k() {
            return Err(Error::MonitorTerminated("the monitoring horizon has been reached"));
        }
        if x_new > self.n {
            return Err(Error::Domain(format!("observation {x_new} exceeds n = {}", self.n)));
        }
        if w_new.len() + 2 != self.beta_hat.dim() {
            return Err(Error::Dimension {
                expected: self.beta_hat.dim() - 2,
                got: w_new.len(),
            });
        }
        let z = build_regressor(self.x_prev, w_new);
        let g = score_term(&self.beta_hat, &z, x_new, self.n);
        for (s, v) in self.running_sum.iter_mut().zip(&g.values) {
            *s = *s + *v;
        }
        self.k += 1;
        self.x_prev = x_new;
        let w = self.weight.weight(self.config.m, self.k);
        let stat = w * w * self.config.a.quad_form(&self.running_sum);
        self.statistic_history.push(stat);
        if stat >= self.config.threshold_c {
            self.alarm_at = Some(self.k);
        }
        Ok(stat)
    }

    /// Feeds observations until an alarm, the horizon, or the end of the stream.
    pub fn run<I, V>(&mut self, stream: I) -> Result<MonitorResult<T>>
    where
        I: IntoIterator<Item = (u32, V)>,
        V: AsRef<[T]>,
    {
        for (x, w) in stream {
            if self.is_terminated() {
                break;
            }
            self.update(x, w.as_ref())?;
        }
        Ok(MonitorResult {
            alarm_at: self.alarm_at,
            statistic_history: self.statistic_history.clone(),
            truncated: self.alarm_at.is_none() && self.k < self.config.max_k(),
        })
    }
}
