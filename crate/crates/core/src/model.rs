//! The Binomial AR(1) data-generating process.
//!
//! Conditionally on the past, `X_t ~ Bin(n, π_t)` with
//! `logit(π_t) = φ₀ + φ₁ X_{t−1} + γᵀ W_t`, where `W_t` is an i.i.d. bounded
//! exogenous vector. The regressor `Z_{t−1} = (1, X_{t−1}, W_t)` therefore has
//! length `l + 2`.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{logistic, softplus, Real};
use crate::special::{gauss_legendre, ln_choose_table, normal_cdf, normal_pdf};

/// Default half-width of the compact parameter box.
pub const DEFAULT_BOX_BOUND: f64 = 20.0;
/// Default number of discarded warm-up transitions before `X₀`.
pub const DEFAULT_BURN_IN: usize = 500;
/// Largest binomial total the stationary oracle accepts.
pub const ORACLE_MAX_N: u32 = 30;

/// Coefficients `(φ₀, φ₁, γ₁..γ_l)` of the linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
}

impl<T: Real> ParamVector<T> {
    pub fn new(phi0: T, phi1: T, gamma: &[T]) -> Self {
        let mut values = Vec::with_capacity(gamma.len() + 2);
        values.push(phi0);
        values.push(phi1);
        values.extend_from_slice(gamma);
        Self { values }
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Dimension {
                expected: 2,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("parameter vector has non-finite entries".into()));
        }
        Ok(Self {
            values: values.to_vec(),
        })
    }

    pub fn zeros(l: usize) -> Self {
        Self {
            values: vec![T::zero(); l + 2],
        }
    }

    pub fn phi0(&self) -> T {
        self.values[0]
    }

    pub fn phi1(&self) -> T {
        self.values[1]
    }

    pub fn gamma(&self) -> &[T] {
        &self.values[2..]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Length `l + 2`.
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Number of exogenous coefficients.
    pub fn l(&self) -> usize {
        self.values.len() - 2
    }

    pub fn in_box(&self, bound: T) -> bool {
        self.values.iter().all(|v| v.is_finite() && v.abs() <= bound)
    }

    /// `βᵀz`
    pub fn dot(&self, z: &[T]) -> T {
        self.values.iter().zip(z).map(|(&b, &z)| b * z).sum()
    }
}

/// Law of each exogenous coordinate before clamping.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseDistribution<T> {
    Normal { mean: T, sd: T },
}

impl<T: Real> BaseDistribution<T> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match *self {
            BaseDistribution::Normal { mean, sd } => mean + sd * T::standard_normal(rng),
        }
    }
}

/// I.i.d. exogenous covariates, each coordinate clamped to `[clamp_lo, clamp_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousSpec<T> {
    pub base: BaseDistribution<T>,
    pub clamp_lo: T,
    pub clamp_hi: T,
    pub dim: usize,
}

impl<T: Real> ExogenousSpec<T> {
    pub fn new(base: BaseDistribution<T>, clamp_lo: T, clamp_hi: T, dim: usize) -> Result<Self> {
        if !(clamp_lo.is_finite() && clamp_hi.is_finite() && clamp_lo < clamp_hi) {
            return Err(Error::InvalidSpec(format!(
                "clamp bounds must be finite with lo < hi (got {clamp_lo}, {clamp_hi})"
            )));
        }
        match base {
            BaseDistribution::Normal { mean, sd } => {
                if !mean.is_finite() || !(sd > T::zero()) || !sd.is_finite() {
                    return Err(Error::InvalidSpec(format!(
                        "normal base needs finite mean and positive sd (got {mean}, {sd})"
                    )));
                }
            }
        }
        Ok(Self {
            base,
            clamp_lo,
            clamp_hi,
            dim,
        })
    }

    /// A spec without exogenous covariates.
    pub fn none() -> Self {
        Self {
            base: BaseDistribution::Normal {
                mean: T::zero(),
                sd: T::one(),
            },
            clamp_lo: -T::one(),
            clamp_hi: T::one(),
            dim: 0,
        }
    }

    pub fn clamp(&self, v: T) -> T {
        v.max(self.clamp_lo).min(self.clamp_hi)
    }

    /// Appends one clamped draw of `W_t` to `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<T>) {
        for _ in 0..self.dim {
            let v = self.base.sample(rng);
            out.push(self.clamp(v));
        }
    }

    pub fn contains(&self, v: T) -> bool {
        v >= self.clamp_lo && v <= self.clamp_hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T> {
    pub n: u32,
    pub beta: ParamVector<T>,
    pub exo: ExogenousSpec<T>,
}

impl<T: Real> ModelSpec<T> {
    pub fn new(n: u32, beta: ParamVector<T>, exo: ExogenousSpec<T>) -> Result<Self> {
        let spec = Self { n, beta, exo };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidSpec("binomial total n must be at least 1".into()));
        }
        if self.beta.dim() != self.exo.dim + 2 {
            return Err(Error::Dimension {
                expected: self.exo.dim + 2,
                got: self.beta.dim(),
            });
        }
        if !self.beta.in_box(T::lit(DEFAULT_BOX_BOUND)) {
            return Err(Error::InvalidSpec(format!(
                "beta entries must be finite and within ±{DEFAULT_BOX_BOUND}"
            )));
        }
        Ok(())
    }

    /// The standard simulation design: `n = 10`, `β = (−1, 0.1, 0.4)` and a
    /// single covariate `W ~ N(1, 0.1)` clamped to `[0, 10]`.
    pub fn benchmark() -> Self {
        Self {
            n: 10,
            beta: ParamVector::new(T::lit(-1.0), T::lit(0.1), &[T::lit(0.4)]),
            exo: ExogenousSpec {
                base: BaseDistribution::Normal {
                    mean: T::one(),
                    sd: T::lit(0.1),
                },
                clamp_lo: T::zero(),
                clamp_hi: T::lit(10.0),
                dim: 1,
            },
        }
    }

    pub fn with_beta(&self, beta: ParamVector<T>) -> Result<Self> {
        Self::new(self.n, beta, self.exo.clone())
    }

    pub fn l(&self) -> usize {
        self.exo.dim
    }
}

/// Observed path `X₀..X_T` with the covariates `W₁..W_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSample<T> {
    x: Vec<u32>,
    w: Vec<T>,
    l: usize,
    pub seed: Option<u64>,
}

impl<T: Real> SeriesSample<T> {
    /// `x` holds `X₀..X_T`; `w` is the row-major `T × l` covariate matrix.
    pub fn new(x: Vec<u32>, w: Vec<T>, l: usize, seed: Option<u64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::TooShort { got: 0, need: 1 });
        }
        let t = x.len() - 1;
        if w.len() != t * l {
            return Err(Error::Dimension {
                expected: t * l,
                got: w.len(),
            });
        }
        Ok(Self { x, w, l, seed })
    }

    /// Checks counts against `n` and covariates against the clamp bounds.
    pub fn validate(&self, n: u32, exo: Option<&ExogenousSpec<T>>) -> Result<()> {
        if let Some(bad) = self.x.iter().find(|&&v| v > n) {
            return Err(Error::Domain(format!("count {bad} exceeds n = {n}")));
        }
        if let Some(exo) = exo {
            if exo.dim != self.l {
                return Err(Error::Dimension {
                    expected: exo.dim,
                    got: self.l,
                });
            }
            if let Some(bad) = self.w.iter().find(|&&v| !exo.contains(v)) {
                return Err(Error::Domain(format!("covariate {bad} outside clamp bounds")));
            }
        }
        Ok(())
    }

    /// Number of transitions `T` (observations after `X₀`).
    pub fn len(&self) -> usize {
        self.x.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn x(&self) -> &[u32] {
        &self.x
    }

    pub fn w(&self) -> &[T] {
        &self.w
    }

    /// Covariates `W_t`, `1 ≤ t ≤ T`.
    pub fn w_row(&self, t: usize) -> &[T] {
        &self.w[(t - 1) * self.l..t * self.l]
    }

    /// `Z_{t−1}` for `1 ≤ t ≤ T`.
    pub fn regressor(&self, t: usize) -> Vec<T> {
        build_regressor(self.x[t - 1], self.w_row(t))
    }

    /// The first `m` transitions, i.e. `X₀..X_m` and `W₁..W_m`.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m > self.len() {
            return Err(Error::TooShort {
                got: self.len(),
                need: m,
            });
        }
        Ok(Self {
            x: self.x[..=m].to_vec(),
            w: self.w[..m * self.l].to_vec(),
            l: self.l,
            seed: self.seed,
        })
    }

    /// Observations after index `m` as `(X_t, W_t)` pairs, for feeding a monitor.
    pub fn suffix_stream(&self, m: usize) -> Vec<(u32, Vec<T>)> {
        ((m + 1)..=self.len())
            .map(|t| (self.x[t], self.w_row(t).to_vec()))
            .collect()
    }
}

/// Logit link on the mean scale: `log(μ / (n − μ))`.
pub fn link_eval<T: Real>(mu: T, n: u32) -> Result<T> {
    let nf = T::from_u32(n).expect("u32 to float");
    if !(mu > T::zero() && mu < nf) {
        return Err(Error::Domain(format!("link needs 0 < mu < {n}, got {mu}")));
    }
    Ok((mu / (nf - mu)).ln())
}

/// Inverse of [`link_eval`]: `n / (1 + exp(−η))`.
pub fn inverse_link<T: Real>(eta: T, n: u32) -> T {
    T::from_u32(n).expect("u32 to float") * logistic(eta)
}

/// `π = 1 / (1 + exp(−βᵀz))`.
///
/// Strictly inside `(0, 1)` as long as `|βᵀz|` stays below about 36 in `f64`;
/// beyond that the probability rounds to an endpoint, which is why the
/// likelihood works on the log scale.
pub fn success_prob<T: Real>(beta: &ParamVector<T>, z: &[T]) -> Result<T> {
    if z.len() != beta.dim() {
        return Err(Error::Dimension {
            expected: beta.dim(),
            got: z.len(),
        });
    }
    Ok(logistic(beta.dot(z)))
}

/// `Z_{t−1} = (1, X_{t−1}, W_t)`.
pub fn build_regressor<T: Real>(x_prev: u32, w: &[T]) -> Vec<T> {
    let mut z = Vec::with_capacity(w.len() + 2);
    z.push(T::one());
    z.push(T::from_u32(x_prev).expect("u32 to float"));
    z.extend_from_slice(w);
    z
}

/// How `X₀` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Start from `Bin(n, 1/2)` and discard this many transitions.
    BurnIn(usize),
    /// Use the given value as `X₀`.
    Fixed(u32),
}

impl Default for Init {
    fn default() -> Self {
        Init::BurnIn(DEFAULT_BURN_IN)
    }
}

/// Steps the chain one transition at a time, possibly under changing parameters.
#[derive(Debug, Clone)]
pub struct Simulator<'a, T> {
    spec: &'a ModelSpec<T>,
    x_prev: u32,
    z: Vec<T>,
}

impl<'a, T: Real> Simulator<'a, T> {
    pub fn new<R: Rng + ?Sized>(spec: &'a ModelSpec<T>, init: Init, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let x0 = match init {
            Init::Fixed(x) => {
                if x > spec.n {
                    return Err(Error::Domain(format!("initial value {x} exceeds n = {}", spec.n)));
                }
                x
            }
            Init::BurnIn(_) => draw_binomial(spec.n, 0.5, rng),
        };
        let mut sim = Self {
            spec,
            x_prev: x0,
            z: Vec::with_capacity(spec.l() + 2),
        };
        if let Init::BurnIn(steps) = init {
            let mut w = Vec::with_capacity(spec.l());
            for _ in 0..steps {
                w.clear();
                sim.step(&spec.beta, rng, &mut w);
            }
        }
        Ok(sim)
    }

    pub fn current(&self) -> u32 {
        self.x_prev
    }

    /// Draws `W_t` into `w_out` (appending) and returns `X_t`, using `beta`
    /// as the generating parameter for this transition.
    pub fn step<R: Rng + ?Sized>(&mut self, beta: &ParamVector<T>, rng: &mut R, w_out: &mut Vec<T>) -> u32 {
        let start = w_out.len();
        self.spec.exo.draw_into(rng, w_out);
        self.z.clear();
        self.z.push(T::one());
        self.z.push(T::from_u32(self.x_prev).expect("u32 to float"));
        self.z.extend_from_slice(&w_out[start..]);
        let p = logistic(beta.dot(&self.z)).as_f64();
        let x = draw_binomial(self.spec.n, p, rng);
        self.x_prev = x;
        x
    }
}

fn draw_binomial<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> u32 {
    let p = p.clamp(0.0, 1.0);
    Binomial::new(n as u64, p)
        .expect("probability clamped to [0, 1]")
        .sample(rng) as u32
}

/// Simulates `X₀..X_T` from `spec` with a generator seeded by `seed`.
pub fn simulate_series<T: Real>(spec: &ModelSpec<T>, len: usize, seed: u64, init: Init) -> Result<SeriesSample<T>> {
    let mut rng = rng::seeded(seed);
    let mut s = simulate_series_with(spec, len, init, &mut rng)?;
    s.seed = Some(seed);
    Ok(s)
}

/// As [`simulate_series`], drawing from a caller-supplied generator.
pub fn simulate_series_with<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec<T>,
    len: usize,
    init: Init,
    rng: &mut R,
) -> Result<SeriesSample<T>> {
    if len < 1 {
        return Err(Error::TooShort { got: len, need: 1 });
    }
    let mut sim = Simulator::new(spec, init, rng)?;
    let mut x = Vec::with_capacity(len + 1);
    let mut w = Vec::with_capacity(len * spec.l());
    x.push(sim.current());
    for _ in 0..len {
        x.push(sim.step(&spec.beta, rng, &mut w));
    }
    SeriesSample::new(x, w, spec.l(), None)
}

/// Transition matrix and stationary law of the chain, for small `n`.
#[derive(Debug, Clone)]
pub struct StationaryOracle {
    /// `transition[j][i] = P(X_t = i | X_{t−1} = j)`.
    pub transition: Vec<Vec<f64>>,
    pub pmf: Vec<f64>,
    pub iterations: usize,
}

impl StationaryOracle {
    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
    }

    /// `μP` for an arbitrary row vector `μ`.
    pub fn propagate(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.transition.len()];
        for (j, row) in self.transition.iter().enumerate() {
            for (i, p) in row.iter().enumerate() {
                out[i] += mu[j] * p;
            }
        }
        out
    }
}

const ORACLE_TOL: f64 = 1e-12;
const ORACLE_MAX_ITER: usize = 1_000_000;
const ORACLE_MAX_NODES: usize = 1_000_000;

/// Builds the `(n+1) × (n+1)` transition matrix by integrating the binomial pmf
/// over the exogenous law and solves `μ = μP` by power iteration.
///
/// The clamped covariate is handled as Gauss-Legendre quadrature on the part of
/// the support carrying density, plus point masses at the clamp bounds.
pub fn stationary_oracle<T: Real>(spec: &ModelSpec<T>, w_quadrature: usize) -> Result<StationaryOracle> {
    spec.validate()?;
    if spec.n > ORACLE_MAX_N {
        return Err(Error::InvalidSpec(format!(
            "stationary oracle needs n <= {ORACLE_MAX_N}, got {}",
            spec.n
        )));
    }
    if w_quadrature < 1 {
        return Err(Error::InvalidSpec("need at least one quadrature node".into()));
    }
    let (nodes_1d, weights_1d) = exogenous_rule(&spec.exo, w_quadrature);
    let l = spec.l();
    let total_nodes = nodes_1d.len().checked_pow(l as u32).unwrap_or(usize::MAX);
    if total_nodes > ORACLE_MAX_NODES {
        return Err(Error::InvalidSpec(format!(
            "tensor quadrature with {total_nodes} nodes is too large"
        )));
    }

    let n = spec.n;
    let size = n as usize + 1;
    let beta: Vec<f64> = spec.beta.as_slice().iter().map(|v| v.as_f64()).collect();
    let ln_c = ln_choose_table(n);
    let mut transition = vec![vec![0.0; size]; size];
    let mut idx = vec![0usize; l];
    for _ in 0..total_nodes {
        let mut weight = 1.0;
        let mut exo_eta = beta[0];
        for (d, &i) in idx.iter().enumerate() {
            weight *= weights_1d[i];
            exo_eta += beta[2 + d] * nodes_1d[i];
        }
        for (j, row) in transition.iter_mut().enumerate() {
            let eta = exo_eta + beta[1] * j as f64;
            let ln_p = -softplus(-eta);
            let ln_q = -softplus(eta);
            for (i, cell) in row.iter_mut().enumerate() {
                let lp = ln_c[i] + i as f64 * ln_p + (size - 1 - i) as f64 * ln_q;
                *cell += weight * lp.exp();
            }
        }
        // odometer over the tensor grid
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < nodes_1d.len() {
                break;
            }
            *slot = 0;
        }
    }

    let mut pmf = vec![1.0 / size as f64; size];
    let mut oracle = StationaryOracle {
        transition,
        pmf: Vec::new(),
        iterations: 0,
    };
    for it in 1..=ORACLE_MAX_ITER {
        let next = oracle.propagate(&pmf);
        let s: f64 = next.iter().sum();
        let next: Vec<f64> = next.into_iter().map(|v| v / s).collect();
        let diff = next
            .iter()
            .zip(&pmf)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        pmf = next;
        if diff < ORACLE_TOL {
            oracle.pmf = pmf;
            oracle.iterations = it;
            return Ok(oracle);
        }
    }
    Err(Error::StationaryNonConvergence {
        iterations: ORACLE_MAX_ITER,
    })
}

/// One-dimensional rule for a single clamped covariate coordinate, with
/// weights normalised to sum to one.
fn exogenous_rule<T: Real>(exo: &ExogenousSpec<T>, q: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = exo.clamp_lo.as_f64();
    let hi = exo.clamp_hi.as_f64();
    let BaseDistribution::Normal { mean, sd } = exo.base;
    let (mean, sd) = (mean.as_f64(), sd.as_f64());

    let mut nodes = Vec::with_capacity(q + 2);
    let mut weights = Vec::with_capacity(q + 2);
    let mass_lo = normal_cdf((lo - mean) / sd);
    let mass_hi = normal_cdf(-(hi - mean) / sd);
    if mass_lo > 0.0 {
        nodes.push(lo);
        weights.push(mass_lo);
    }
    // Beyond 12 sd the normal density is below 1e-32; restricting the interval
    // keeps the nodes where the integrand lives.
    let a = lo.max(mean - 12.0 * sd);
    let b = hi.min(mean + 12.0 * sd);
    if a < b {
        let interior = 1.0 - mass_lo - mass_hi;
        let (x, w) = gauss_legendre(q, a, b);
        let raw: Vec<f64> = x
            .iter()
            .zip(&w)
            .map(|(&x, &w)| w * normal_pdf((x - mean) / sd) / sd)
            .collect();
        let raw_total: f64 = raw.iter().sum();
        for (x, r) in x.into_iter().zip(raw) {
            nodes.push(x);
            weights.push(r / raw_total * interior);
        }
    }
    if mass_hi > 0.0 {
        nodes.push(hi);
        weights.push(mass_hi);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_examples() {
        assert_eq!(link_eval(5.0, 10).unwrap(), 0.0);
        assert!((link_eval(7.5, 10).unwrap() - 3f64.ln()).abs() < 1e-15);
        let mu = 3.2_f64;
        assert!((inverse_link(link_eval(mu, 10).unwrap(), 10) - mu).abs() < 1e-12);
    }

    #[test]
    fn link_domain_errors() {
        assert!(matches!(link_eval(0.0, 10), Err(Error::Domain(_))));
        assert!(matches!(link_eval(10.0, 10), Err(Error::Domain(_))));
        assert!(matches!(link_eval(-1.0, 10), Err(Error::Domain(_))));
    }

    #[test]
    fn success_prob_examples() {
        let b = ParamVector::new(0.0, 0.0, &[]);
        assert_eq!(success_prob(&b, &[1.0, 4.0]).unwrap(), 0.5);
        let b = ParamVector::new(3f64.ln(), 0.0, &[]);
        assert!((success_prob(&b, &[1.0, 2.0]).unwrap() - 0.75).abs() < 1e-15);
        let b = ParamVector::new(-1.0, 0.1, &[0.4]);
        let p: f64 = success_prob(&b, &[1.0, 0.0, 1.0]).unwrap();
        // 1 / (1 + e^0.6)
        assert!((p - 0.354_343_693_774_204_7).abs() < 1e-15);
        assert!((p - 0.35434).abs() < 1e-5);
    }

    #[test]
    fn success_prob_dimension_mismatch() {
        let b = ParamVector::new(-1.0, 0.1, &[0.4]);
        assert!(matches!(
            success_prob(&b, &[1.0, 0.0]),
            Err(Error::Dimension { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn regressor_assembly() {
        assert_eq!(build_regressor(3, &[0.9]), vec![1.0, 3.0, 0.9]);
        assert_eq!(build_regressor::<f64>(0, &[]), vec![1.0, 0.0]);
        assert_eq!(build_regressor(10, &[0.0, 2.5]), vec![1.0, 10.0, 0.0, 2.5]);
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = ModelSpec::<f64>::benchmark();
        let a = simulate_series(&spec, 300, 42, Init::default()).unwrap();
        let b = simulate_series(&spec, 300, 42, Init::default()).unwrap();
        let c = simulate_series(&spec, 300, 43, Init::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x(), c.x());
        a.validate(spec.n, Some(&spec.exo)).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.w().len(), 300);
    }

    #[test]
    fn saturated_logistic_pins_counts_at_n() {
        let spec = ModelSpec::new(10, ParamVector::new(20.0, 0.0, &[]), ExogenousSpec::none()).unwrap();
        let s = simulate_series(&spec, 100, 1, Init::Fixed(0)).unwrap();
        assert!(s.x()[1..].iter().all(|&x| x == 10));
        let p = success_prob(&spec.beta, &[1.0, 10.0]).unwrap();
        assert!(p > 1.0 - 1e-8);
    }

    #[test]
    fn invalid_specs_rejected() {
        let exo = ExogenousSpec::<f64>::none();
        assert!(ModelSpec::new(0, ParamVector::new(0.0, 0.0, &[]), exo.clone()).is_err());
        assert!(matches!(
            ModelSpec::new(5, ParamVector::new(0.0, 0.0, &[1.0]), exo.clone()),
            Err(Error::Dimension { .. })
        ));
        assert!(ModelSpec::new(5, ParamVector::new(25.0, 0.0, &[]), exo).is_err());
        assert!(ExogenousSpec::new(BaseDistribution::Normal { mean: 0.0, sd: 1.0 }, 1.0, 1.0, 1).is_err());
        assert!(ExogenousSpec::new(BaseDistribution::Normal { mean: 0.0, sd: 0.0 }, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn zero_length_rejected() {
        let spec = ModelSpec::<f64>::benchmark();
        assert!(matches!(
            simulate_series(&spec, 0, 1, Init::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn oracle_constant_probability() {
        let spec = ModelSpec::new(4, ParamVector::new(0.0, 0.0, &[]), ExogenousSpec::<f64>::none()).unwrap();
        let o = stationary_oracle(&spec, 64).unwrap();
        let expected = [1.0, 4.0, 6.0, 4.0, 1.0].map(|v| v / 16.0);
        for row in &o.transition {
            for (a, b) in row.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        for (a, b) in o.pmf.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn oracle_rows_sum_to_one_and_fixed_point_holds() {
        let spec = ModelSpec::<f64>::benchmark();
        let o = stationary_oracle(&spec, 64).unwrap();
        for row in &o.transition {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let next = o.propagate(&o.pmf);
        for (a, b) in next.iter().zip(&o.pmf) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(o.pmf.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn oracle_quadrature_converged() {
        // Doubling the node count should not move the stationary law.
        let spec = ModelSpec::<f64>::benchmark();
        let a = stationary_oracle(&spec, 64).unwrap();
        let b = stationary_oracle(&spec, 128).unwrap();
        for (x, y) in a.pmf.iter().zip(&b.pmf) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_rejects_large_n() {
        let spec = ModelSpec::new(31, ParamVector::new(0.0, 0.0, &[]), ExogenousSpec::<f64>::none()).unwrap();
        assert!(matches!(stationary_oracle(&spec, 16), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn clamp_atoms_carry_tail_mass() {
        // A covariate centred at the lower clamp puts half its mass on the atom.
        let exo = ExogenousSpec::new(BaseDistribution::Normal { mean: 0.0, sd: 1.0 }, 0.0, 10.0, 1).unwrap();
        let (nodes, weights) = exogenous_rule(&exo, 32);
        assert_eq!(nodes[0], 0.0);
        assert!((weights[0] - 0.5).abs() < 1e-12);
        let mean: f64 = nodes.iter().zip(&weights).map(|(x, w)| x * w).sum();
        // E[max(Z, 0)] = 1 / sqrt(2π)
        assert!((mean - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn f32_kernels_work() {
        let b = ParamVector::<f32>::new(-1.0, 0.1, &[0.4]);
        let p = success_prob(&b, &build_regressor(0, &[1.0f32])).unwrap();
        assert!((p - 0.35434).abs() < 1e-5);
        let spec = ModelSpec::<f32>::benchmark();
        let s = simulate_series(&spec, 50, 3, Init::default()).unwrap();
        s.validate(10, Some(&spec.exo)).unwrap();
    }
}
