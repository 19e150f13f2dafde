//! Monte-Carlo critical values for the monitoring statistic.
//!
//! Under no change the detector's supremum converges in law to
//! `sup_{0<s≤N} ρ²(s, γ) (W₁(s) − sW₂(1))ᵀ A (W₁(s) − sW₂(1))`, with `W₁`, `W₂`
//! independent Brownian motions of covariance `Σ`. Each replication discretizes
//! `W₁` on the grid `k/grid_m`, `k = 1..N·grid_m`, from partial sums of
//! `N(0, Σ)` increments, draws one more vector for `W₂(1)`, and records the
//! maximum over the grid. `c(γ, α)` is the empirical `1 − α` quantile.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::monitoring::{check_gamma, rho_unchecked};
use crate::rng;
use crate::scalar::Real;

/// Grid fineness used when nothing else is configured.
pub const DEFAULT_GRID_M: usize = 1000;
pub const DEFAULT_REPS: usize = 10_000;

/// Quadratic-form matrix for the limit functional.
#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationA<T> {
    /// `A = Σ⁻¹`. The functional is then free of `Σ`, and it is evaluated on
    /// the whitened increments directly so that the result does not depend on
    /// `Σ` even in floating point.
    InverseSigma,
    Explicit(Matrix<T>),
}

#[derive(Debug, Clone)]
pub struct CalibrationConfig<T> {
    pub sigma: Matrix<T>,
    pub a: CalibrationA<T>,
    /// Horizon multiplier `N`.
    pub horizon: T,
    pub grid_m: usize,
    pub reps: usize,
    pub gammas: Vec<T>,
    pub alphas: Vec<T>,
    pub master_seed: u64,
}

impl<T: Real> CalibrationConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let dim = self.sigma.dim();
        if dim == 0 {
            return Err(Error::InvalidSpec("sigma must be non-empty".into()));
        }
        let sym_tol = T::lit(1e-10);
        if !self.sigma.is_symmetric(sym_tol) {
            return Err(Error::InvalidSpec("sigma must be symmetric".into()));
        }
        self.sigma.cholesky()?;
        if let CalibrationA::Explicit(a) = &self.a {
            if a.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: a.dim(),
                });
            }
            if !a.is_symmetric(sym_tol) {
                return Err(Error::InvalidSpec("A must be symmetric".into()));
            }
            a.cholesky()?;
        }
        if !(self.horizon > T::zero()) || !self.horizon.is_finite() {
            return Err(Error::InvalidSpec("horizon N must be positive and finite".into()));
        }
        if self.grid_m < 100 {
            return Err(Error::InvalidSpec(format!("grid_m must be at least 100, got {}", self.grid_m)));
        }
        if self.reps < 100 {
            return Err(Error::InvalidSpec(format!("reps must be at least 100, got {}", self.reps)));
        }
        for &g in &self.gammas {
            check_gamma(g)?;
        }
        for &a in &self.alphas {
            if !(a > T::zero() && a < T::one()) {
                return Err(Error::InvalidSpec(format!("alpha must lie in (0, 1), got {a}")));
            }
        }
        Ok(())
    }

    /// Number of grid points `⌊N · grid_m⌋`.
    pub fn steps(&self) -> usize {
        (self.horizon * T::from_usize(self.grid_m).expect("usize to float"))
            .floor()
            .to_usize()
            .unwrap_or(0)
    }
}

/// Precomputed pieces shared by all replications of one configuration.
struct PathSampler<T> {
    dim: usize,
    steps: usize,
    grid_m: usize,
    master_seed: u64,
    colour: Option<Cholesky<T>>,
    a: Option<Matrix<T>>,
    /// `ρ²(k/grid_m, γ)` per requested γ, `k = 1..steps`.
    rho_sq: Vec<Vec<T>>,
}

impl<T: Real> PathSampler<T> {
    fn new(config: &CalibrationConfig<T>, gammas: &[T]) -> Result<Self> {
        config.validate()?;
        for &g in gammas {
            check_gamma(g)?;
        }
        let steps = config.steps();
        if steps == 0 {
            return Err(Error::InvalidSpec("N * grid_m must be at least 1".into()));
        }
        let gm = T::from_usize(config.grid_m).expect("usize to float");
        let rho_sq = gammas
            .iter()
            .map(|&g| {
                (1..=steps)
                    .map(|k| {
                        let r = rho_unchecked(T::from_usize(k).expect("usize to float") / gm, g);
                        r * r
                    })
                    .collect()
            })
            .collect();
        let (colour, a) = match &config.a {
            CalibrationA::InverseSigma => (None, None),
            CalibrationA::Explicit(a) => (Some(config.sigma.cholesky()?), Some(a.clone())),
        };
        Ok(Self {
            dim: config.sigma.dim(),
            steps,
            grid_m: config.grid_m,
            master_seed: config.master_seed,
            colour,
            a,
            rho_sq,
        })
    }

    /// Supremum of the discretized functional for replication `rep`, one value per γ.
    fn sample(&self, rep: u64, path: &mut Vec<T>) -> Vec<T> {
        let d = self.dim;
        let mut rng = rng::stream(self.master_seed, rep);
        let mut z = vec![T::zero(); d];
        let mut inc = vec![T::zero(); d];
        let mut acc = vec![T::zero(); d];
        path.clear();
        path.reserve(self.steps * d);
        for _ in 0..self.steps {
            for v in z.iter_mut() {
                *v = T::standard_normal(&mut rng);
            }
            match &self.colour {
                Some(ch) => ch.mul_lower(&z, &mut inc),
                None => inc.copy_from_slice(&z),
            }
            for (a, i) in acc.iter_mut().zip(&inc) {
                *a = *a + *i;
            }
            path.extend_from_slice(&acc);
        }
        for v in z.iter_mut() {
            *v = T::standard_normal(&mut rng);
        }
        let mut w2 = vec![T::zero(); d];
        match &self.colour {
            Some(ch) => ch.mul_lower(&z, &mut w2),
            None => w2.copy_from_slice(&z),
        }

        let gm = T::from_usize(self.grid_m).expect("usize to float");
        let inv_sqrt = gm.sqrt().recip();
        let mut best = vec![T::neg_infinity(); self.rho_sq.len()];
        let mut v = vec![T::zero(); d];
        for k in 0..self.steps {
            let s = T::from_usize(k + 1).expect("usize to float") / gm;
            let partial = &path[k * d..(k + 1) * d];
            for j in 0..d {
                v[j] = partial[j] * inv_sqrt - s * w2[j];
            }
            let q = match &self.a {
                Some(a) => a.quad_form(&v),
                None => v.iter().map(|&x| x * x).sum(),
            };
            for (b, table) in best.iter_mut().zip(&self.rho_sq) {
                let val = table[k] * q;
                if val > *b {
                    *b = val;
                }
            }
        }
        best
    }
}

/// One draw of the supremum functional for replication `rep_index`.
pub fn sample_sup_functional<T: Real>(config: &CalibrationConfig<T>, gamma: T, rep_index: u64) -> Result<T> {
    let sampler = PathSampler::new(config, &[gamma])?;
    Ok(sampler.sample(rep_index, &mut Vec::new())[0])
}

/// All replications for every γ in `gammas`, sharing the same Gaussian paths.
///
/// Returned as `values[gamma_index][rep]`. Replications run in parallel but
/// each owns its own stream, so the output does not depend on scheduling.
pub fn sample_all<T: Real>(config: &CalibrationConfig<T>, gammas: &[T]) -> Result<Vec<Vec<T>>> {
    let sampler = PathSampler::new(config, gammas)?;
    let per_rep: Vec<Vec<T>> = (0..config.reps as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, rep| sampler.sample(rep, buf))
        .collect();
    let mut out = vec![Vec::with_capacity(config.reps); gammas.len()];
    for row in per_rep {
        for (g, v) in row.into_iter().enumerate() {
            out[g].push(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold<T> {
    pub c: T,
    /// Fewer than five samples lie beyond the quantile.
    pub tail_warning: bool,
}

/// Empirical `1 − α` quantile, taking the smallest sample whose empirical CDF
/// reaches `1 − α`.
pub fn empirical_quantile<T: Real>(samples: &[T], alpha: T) -> Result<Threshold<T>> {
    if samples.is_empty() {
        return Err(Error::TooShort { got: 0, need: 1 });
    }
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(quantile_sorted(&sorted, alpha))
}

fn quantile_sorted<T: Real>(sorted: &[T], alpha: T) -> Threshold<T> {
    let r = sorted.len();
    let target = (T::one() - alpha).as_f64() * r as f64;
    // absorb rounding in (1 − α)·R so exact multiples are not bumped up a rank
    let rank = (target - 1e-9).ceil().max(1.0) as usize;
    let idx = rank.min(r) - 1;
    Threshold {
        c: sorted[idx],
        tail_warning: alpha.as_f64() * (r as f64) < 5.0,
    }
}

/// `c(γ, α)` from `config.reps` fresh replications.
pub fn compute_threshold<T: Real>(config: &CalibrationConfig<T>, gamma: T, alpha: T) -> Result<Threshold<T>> {
    let samples = sample_all(config, &[gamma])?;
    empirical_quantile(&samples[0], alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEntry<T> {
    pub gamma: T,
    pub alpha: T,
    pub c: T,
    pub tail_warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable<T> {
    pub entries: Vec<ThresholdEntry<T>>,
    pub reps: usize,
    pub grid_m: usize,
    pub horizon: T,
    pub seed: u64,
}

impl<T: Real> ThresholdTable<T> {
    pub fn lookup(&self, gamma: T, alpha: T) -> Option<T> {
        let tol = T::lit(1e-9);
        self.entries
            .iter()
            .find(|e| (e.gamma - gamma).abs() <= tol && (e.alpha - alpha).abs() <= tol)
            .map(|e| e.c)
    }

    /// Lookup that also requires the table's horizon to match the monitor's.
    pub fn lookup_for(&self, gamma: T, alpha: T, horizon: T) -> Result<T> {
        let unavailable = || Error::ThresholdUnavailable {
            gamma: gamma.as_f64(),
            alpha: alpha.as_f64(),
        };
        if (self.horizon - horizon).abs() > T::lit(1e-9) {
            return Err(unavailable());
        }
        self.lookup(gamma, alpha).ok_or_else(unavailable)
    }
}

/// Every `(γ, α)` cell, with common random numbers across γ.
pub fn threshold_table<T: Real>(config: &CalibrationConfig<T>) -> Result<ThresholdTable<T>> {
    let samples = sample_all(config, &config.gammas)?;
    let mut entries = Vec::with_capacity(config.gammas.len() * config.alphas.len());
    for (g, mut vals) in config.gammas.iter().zip(samples) {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        for &alpha in &config.alphas {
            let t = quantile_sorted(&vals, alpha);
            entries.push(ThresholdEntry {
                gamma: *g,
                alpha,
                c: t.c,
                tail_warning: t.tail_warning,
            });
        }
    }
    Ok(ThresholdTable {
        entries,
        reps: config.reps,
        grid_m: config.grid_m,
        horizon: config.horizon,
        seed: config.master_seed,
    })
}
