//! Maximum partial likelihood estimation.
//!
//! The partial likelihood conditions on `X₀` and on the covariates, so the
//! log-likelihood is a sum of binomial log-pmfs with logistic success
//! probabilities. Its score is `Σ Z_{t−1}(X_t − nπ_t)` and its Hessian
//! `−n Σ π_t(1 − π_t) Z_{t−1}Z_{t−1}ᵀ` is negative semidefinite, so Newton's
//! method with step-halving is enough to find the root.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ParamVector, SeriesSample, DEFAULT_BOX_BOUND};
use crate::scalar::{logistic, softplus, Real};
use crate::special::ln_choose_table;

/// Score `PSV_m(β)` or a single term `G(X_t, β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<T> {
    pub values: Vec<T>,
}

impl<T: Real> ScoreVector<T> {
    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Sum of score gradients `Σ ∇G(X_t, β)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix<T> {
    pub values: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct SolverConfig<T> {
    pub score_tol: T,
    pub step_tol: T,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Half-width of the parameter box iterates are projected onto.
    pub box_bound: T,
    pub max_condition: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            score_tol: T::lit(T::SCORE_TOL),
            step_tol: T::lit(T::STEP_TOL),
            max_iter: 100,
            max_halvings: 30,
            box_bound: T::lit(DEFAULT_BOX_BOUND),
            max_condition: T::lit(T::MAX_CONDITION),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub beta_hat: ParamVector<T>,
    /// `(−Σ∇G/m)⁻¹`, the asymptotic covariance of `√m(β̂ − β₀)`.
    pub covariance: Matrix<T>,
    /// `Σ G Gᵀ / m` at `β̂`.
    pub sigma0_hat: Matrix<T>,
    pub log_pl: T,
    pub iterations: usize,
    pub converged: bool,
    pub final_score_norm: T,
    pub hit_boundary: bool,
    /// Number of conditional likelihood terms.
    pub m: usize,
    /// Log partial likelihood after every accepted Newton step, starting at `β⁽⁰⁾`.
    pub log_pl_trace: Vec<T>,
}

impl<T: Real> FitResult<T> {
    pub fn n_params(&self) -> usize {
        self.beta_hat.dim()
    }

    pub fn aic(&self) -> T {
        T::lit(2.0 * self.n_params() as f64) - T::lit(2.0) * self.log_pl
    }

    /// Estimated covariance of `β̂` itself, `covariance / m`.
    pub fn estimator_covariance(&self) -> Matrix<T> {
        self.covariance.scaled(T::one() / T::from_usize(self.m).expect("usize to float"))
    }

    pub fn standard_errors(&self) -> Vec<T> {
        self.estimator_covariance()
            .diagonal()
            .into_iter()
            .map(|v| v.sqrt())
            .collect()
    }
}

fn check_inputs<T: Real>(series: &SeriesSample<T>, n: u32, beta: &ParamVector<T>) -> Result<()> {
    if beta.dim() != series.l() + 2 {
        return Err(Error::Dimension {
            expected: series.l() + 2,
            got: beta.dim(),
        });
    }
    if series.is_empty() {
        return Err(Error::TooShort { got: 0, need: 1 });
    }
    if let Some(bad) = series.x().iter().find(|&&v| v > n) {
        return Err(Error::Domain(format!("count {bad} exceeds n = {n}")));
    }
    Ok(())
}

/// `G(X_t, β) = Z_{t−1}(X_t − nπ_t(β))` for one observation.
pub fn score_term<T: Real>(beta: &ParamVector<T>, z: &[T], x: u32, n: u32) -> ScoreVector<T> {
    let resid = residual(beta, z, x, n);
    ScoreVector {
        values: z.iter().map(|&zi| zi * resid).collect(),
    }
}

#[inline]
fn residual<T: Real>(beta: &ParamVector<T>, z: &[T], x: u32, n: u32) -> T {
    let nf = T::from_u32(n).expect("u32 to float");
    T::from_u32(x).expect("u32 to float") - nf * logistic(beta.dot(z))
}

/// `Σ_{t=1}^m [log C(n, X_t) + X_t log π_t + (n − X_t) log(1 − π_t)]`.
pub fn log_partial_likelihood<T: Real>(series: &SeriesSample<T>, n: u32, beta: &ParamVector<T>) -> Result<T> {
    check_inputs(series, n, beta)?;
    let ln_c = ln_choose_table(n);
    Ok(log_pl_unchecked(series, n, beta, &ln_c))
}

fn log_pl_unchecked<T: Real>(series: &SeriesSample<T>, n: u32, beta: &ParamVector<T>, ln_c: &[f64]) -> T {
    let x = series.x();
    let mut acc = T::zero();
    let mut z = Vec::with_capacity(beta.dim());
    for t in 1..=series.len() {
        fill_regressor(&mut z, x[t - 1], series.w_row(t));
        let eta = beta.dot(&z);
        let xt = x[t];
        let succ = T::from_u32(xt).expect("u32 to float");
        let fail = T::from_u32(n - xt).expect("u32 to float");
        // log π = −softplus(−η), log(1 − π) = −softplus(η)
        acc = acc + T::lit(ln_c[xt as usize]) - succ * softplus(-eta) - fail * softplus(eta);
    }
    acc
}

#[inline]
fn fill_regressor<T: Real>(z: &mut Vec<T>, x_prev: u32, w: &[T]) {
    z.clear();
    z.push(T::one());
    z.push(T::from_u32(x_prev).expect("u32 to float"));
    z.extend_from_slice(w);
}

/// `PSV_m(β) = Σ_{t=1}^m Z_{t−1}(X_t − nπ_t(β))`.
pub fn score<T: Real>(series: &SeriesSample<T>, n: u32, beta: &ParamVector<T>) -> Result<ScoreVector<T>> {
    check_inputs(series, n, beta)?;
    let x = series.x();
    let mut values = vec![T::zero(); beta.dim()];
    let mut z = Vec::with_capacity(beta.dim());
    for t in 1..=series.len() {
        fill_regressor(&mut z, x[t - 1], series.w_row(t));
        let r = residual(beta, &z, x[t], n);
        for (v, &zi) in values.iter_mut().zip(&z) {
            *v = *v + zi * r;
        }
    }
    Ok(ScoreVector { values })
}

/// `Σ_t ∇G(X_t, β) = −n Σ_t π_t(1 − π_t) Z_{t−1}Z_{t−1}ᵀ`.
pub fn score_gradient<T: Real>(series: &SeriesSample<T>, n: u32, beta: &ParamVector<T>) -> Result<InfoMatrix<T>> {
    check_inputs(series, n, beta)?;
    let x = series.x();
    let nf = T::from_u32(n).expect("u32 to float");
    let mut m = Matrix::zeros(beta.dim());
    let mut z = Vec::with_capacity(beta.dim());
    for t in 1..=series.len() {
        fill_regressor(&mut z, x[t - 1], series.w_row(t));
        let p = logistic(beta.dot(&z));
        m.add_outer(&z, -nf * p * (T::one() - p));
    }
    Ok(InfoMatrix { values: m })
}

/// `Σ̂₀ = Σ_t G(X_t, β̂)G(X_t, β̂)ᵀ / m`, required to be positive definite.
pub fn estimate_sigma0<T: Real>(series: &SeriesSample<T>, n: u32, beta_hat: &ParamVector<T>) -> Result<Matrix<T>> {
    check_inputs(series, n, beta_hat)?;
    let x = series.x();
    let mut acc = Matrix::zeros(beta_hat.dim());
    let mut z = Vec::with_capacity(beta_hat.dim());
    for t in 1..=series.len() {
        fill_regressor(&mut z, x[t - 1], series.w_row(t));
        let r = residual(beta_hat, &z, x[t], n);
        acc.add_outer(&z, r * r);
    }
    let sigma0 = acc.scaled(T::one() / T::from_usize(series.len()).expect("usize to float"));
    sigma0.cholesky()?;
    Ok(sigma0)
}

/// `(−Σ_t ∇G(X_t, β̂)/m)⁻¹`.
pub fn estimate_covariance<T: Real>(series: &SeriesSample<T>, n: u32, beta_hat: &ParamVector<T>) -> Result<Matrix<T>> {
    let grad = score_gradient(series, n, beta_hat)?.values;
    let m = T::from_usize(series.len()).expect("usize to float");
    let info = grad.scaled(-T::one() / m);
    info.inverse_spd()
}

/// Newton's method on `PSV_m(β) = 0` from `β = 0`, with step-halving and
/// projection onto the parameter box.
pub fn fit_mple<T: Real>(series: &SeriesSample<T>, n: u32, config: &SolverConfig<T>) -> Result<FitResult<T>> {
    let dim = series.l() + 2;
    let m = series.len();
    if m < dim + 1 {
        return Err(Error::TooShort { got: m, need: dim + 1 });
    }
    let mut beta = ParamVector::zeros(series.l());
    check_inputs(series, n, &beta)?;
    let obs = &series.x()[1..];
    if obs.iter().all(|&v| v == 0) {
        return Err(Error::Separation { value: 0 });
    }
    if obs.iter().all(|&v| v == n) {
        return Err(Error::Separation { value: n });
    }

    let ln_c = ln_choose_table(n);
    let mut ll = log_pl_unchecked(series, n, &beta, &ln_c);
    let mut trace = vec![ll];
    let mut hit_boundary = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut g = score(series, n, &beta)?;

    while iterations < config.max_iter {
        if g.sup_norm() < config.score_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let neg_h = score_gradient(series, n, &beta)?.values.scaled(-T::one());
        let condition = neg_h.symmetric_condition();
        if !(condition <= config.max_condition) {
            return Err(Error::SingularHessian {
                condition: condition.as_f64(),
            });
        }
        let direction = match neg_h.cholesky() {
            Ok(ch) => ch.solve(&g.values),
            Err(_) => neg_h.solve_lu(&g.values)?,
        };

        // Close to the optimum the predicted gain falls below the rounding
        // noise of ll itself; such steps must not be rejected as descent.
        let noise = T::epsilon() * T::lit(64.0) * ll.abs().max(T::one());
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let mut cand = beta.clone();
            let mut projected = false;
            for (c, &d) in cand.as_mut_slice().iter_mut().zip(&direction) {
                *c = *c + t * d;
                if c.abs() > config.box_bound {
                    *c = c.signum() * config.box_bound;
                    projected = true;
                }
            }
            let ll_c = log_pl_unchecked(series, n, &cand, &ln_c);
            let step = direction.iter().fold(T::zero(), |s, d| s.max((t * *d).abs()));
            let ascent = ll_c >= ll - noise;
            if ascent || step < config.step_tol {
                accepted = Some((cand, ll_c, step, projected && ascent, ascent));
                break;
            }
            t = t * T::lit(0.5);
        }
        let Some((cand, ll_c, step, projected, ascent)) = accepted else {
            break;
        };
        hit_boundary |= projected;
        if ascent {
            beta = cand;
            ll = ll_c;
            trace.push(ll);
        }
        g = score(series, n, &beta)?;
        if step < config.step_tol {
            converged = true;
            break;
        }
    }
    if !converged && g.sup_norm() < config.score_tol {
        converged = true;
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            score_norm: g.sup_norm().as_f64(),
        });
    }

    let covariance = estimate_covariance(series, n, &beta).map_err(|_| Error::SingularHessian {
        condition: f64::INFINITY,
    })?;
    let sigma0_hat = estimate_sigma0(series, n, &beta)?;
    Ok(FitResult {
        beta_hat: beta,
        covariance,
        sigma0_hat,
        log_pl: ll,
        iterations,
        converged,
        final_score_norm: g.sup_norm(),
        hit_boundary,
        m,
        log_pl_trace: trace,
    })
}
