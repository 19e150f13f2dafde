//! Weekly per-state rates → binomial exceedance counts, and the comparison of
//! a constant-probability binomial model against the binomial AR(1).
//!
//! A week is an exceedance for a state when its rate is strictly above the
//! state's same-week average over the baseline years.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_mple, FitResult, SolverConfig};
use crate::model::SeriesSample;
use crate::special::{chi_square_sf, ln_choose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub state: String,
    pub iso_year: i32,
    pub week: u32,
    pub rate: f64,
}

/// Validated panel keyed by `(state, iso_year, week)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RatePanel {
    rates: BTreeMap<(String, i32, u32), f64>,
}

impl RatePanel {
    pub fn from_rows(rows: impl IntoIterator<Item = RateRow>) -> Result<Self> {
        let mut rates = BTreeMap::new();
        for r in rows {
            if !(1..=53).contains(&r.week) {
                return Err(Error::Domain(format!("week {} outside 1..=53", r.week)));
            }
            if !r.rate.is_finite() || r.rate < 0.0 {
                return Err(Error::Domain(format!(
                    "rate for {} {}-W{} must be finite and nonnegative, got {}",
                    r.state, r.iso_year, r.week, r.rate
                )));
            }
            if rates.insert((r.state.clone(), r.iso_year, r.week), r.rate).is_some() {
                return Err(Error::DuplicateRow {
                    state: r.state,
                    year: r.iso_year,
                    week: r.week,
                });
            }
        }
        Ok(Self { rates })
    }

    /// Reads `state,iso_year,week,rate` CSV (header required).
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        for col in ["state", "iso_year", "week", "rate"] {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::Parse(format!("rate panel: missing column `{col}`")));
            }
        }
        let rows: std::result::Result<Vec<RateRow>, _> = rdr.deserialize().collect();
        Self::from_rows(rows?)
    }

    pub fn get(&self, state: &str, iso_year: i32, week: u32) -> Option<f64> {
        self.rates.get(&(state.to_string(), iso_year, week)).copied()
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn states(&self) -> Vec<String> {
        self.rates
            .keys()
            .map(|(s, _, _)| s.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i32, u32, f64)> {
        self.rates.iter().map(|((s, y, w), r)| (s.as_str(), *y, *w, *r))
    }

    /// Every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rates: self.rates.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
        }
    }
}

/// What to do with ISO week 53, which most baseline years lack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Week53Policy {
    /// Week 53 needs its own baseline observations.
    #[default]
    Strict,
    /// Week 53 is compared against the week-52 baseline.
    UseWeek52,
}

impl Week53Policy {
    fn baseline_week(self, week: u32) -> u32 {
        match self {
            Week53Policy::UseWeek52 if week > 52 => 52,
            _ => week,
        }
    }
}

/// Mean rate per `(state, week-of-year)` over the baseline years.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineTable {
    means: BTreeMap<(String, u32), f64>,
    week53: Week53Policy,
}

impl BaselineTable {
    pub fn get(&self, state: &str, week: u32) -> Option<f64> {
        self.means
            .get(&(state.to_string(), self.week53.baseline_week(week)))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            means: self.means.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
            week53: self.week53,
        }
    }
}

/// Averages each `(state, week)` over `baseline_years`. Every `(state, week)`
/// appearing anywhere in the panel must be covered.
pub fn compute_baseline(panel: &RatePanel, baseline_years: &BTreeSet<i32>) -> Result<BaselineTable> {
    compute_baseline_with(panel, baseline_years, Week53Policy::Strict)
}

pub fn compute_baseline_with(
    panel: &RatePanel,
    baseline_years: &BTreeSet<i32>,
    week53: Week53Policy,
) -> Result<BaselineTable> {
    let mut sums: BTreeMap<(String, u32), (f64, usize)> = BTreeMap::new();
    for (state, year, week, rate) in panel.iter() {
        if baseline_years.contains(&year) {
            let e = sums.entry((state.to_string(), week)).or_insert((0.0, 0));
            e.0 += rate;
            e.1 += 1;
        }
    }
    let means: BTreeMap<_, _> = sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
    let needed: BTreeSet<(String, u32)> = panel
        .iter()
        .map(|(s, _, w, _)| (s.to_string(), week53.baseline_week(w)))
        .collect();
    let missing: Vec<(String, u32)> = needed.into_iter().filter(|k| !means.contains_key(k)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingBaseline(missing));
    }
    Ok(BaselineTable { means, week53 })
}

/// Inclusive range of `(iso_year, week)` labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: (i32, u32),
    pub end: (i32, u32),
}

impl Window {
    pub fn contains(&self, year: i32, week: u32) -> bool {
        (year, week) >= self.start && (year, week) <= self.end
    }
}

/// Exceedance counts with their week labels; `x[t] ∈ 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinomialSeries {
    pub n: u32,
    pub labels: Vec<(i32, u32)>,
    pub x: Vec<u32>,
}

impl BinomialSeries {
    pub fn new(n: u32, labels: Vec<(i32, u32)>, x: Vec<u32>) -> Result<Self> {
        if labels.len() != x.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                got: x.len(),
            });
        }
        if let Some(&bad) = x.iter().find(|&&v| v > n) {
            return Err(Error::Domain(format!("count {bad} exceeds n = {n}")));
        }
        Ok(Self { n, labels, x })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// As a regressor-free series: `x[0]` is the conditioning value.
    pub fn to_sample(&self) -> Result<SeriesSample<f64>> {
        SeriesSample::new(self.x.clone(), Vec::new(), 0, None)
    }

    /// `# n=<n>` line followed by `iso_year,week,x` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# n={}", self.n)?;
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["iso_year", "week", "x"])?;
        for ((y, wk), x) in self.labels.iter().zip(&self.x) {
            wtr.write_record([y.to_string(), wk.to_string(), x.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut n = None;
        let mut body = String::new();
        for line in reader.lines() {
            let line = line?;
            let trimmed = line.trim();
            if let Some(meta) = trimmed.strip_prefix('#') {
                if let Some(v) = meta.trim().strip_prefix("n=") {
                    n = Some(
                        v.trim()
                            .parse::<u32>()
                            .map_err(|e| Error::Parse(format!("binomial series: bad n `{v}`: {e}")))?,
                    );
                }
                continue;
            }
            body.push_str(&line);
            body.push('\n');
        }
        let n = n.ok_or_else(|| Error::Parse("binomial series: missing `# n=` line".into()))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let mut labels = Vec::new();
        let mut x = Vec::new();
        for rec in rdr.deserialize::<(i32, u32, u32)>() {
            let (y, wk, v) = rec?;
            labels.push((y, wk));
            x.push(v);
        }
        Self::new(n, labels, x)
    }
}

/// `x_t = Σ_states 1{rate > baseline}` for every week label in the window.
pub fn binarize_and_sum(
    panel: &RatePanel,
    baseline: &BaselineTable,
    states: &[String],
    window: Window,
) -> Result<BinomialSeries> {
    if states.is_empty() {
        return Err(Error::InvalidSpec("at least one state is required".into()));
    }
    let labels: Vec<(i32, u32)> = panel
        .iter()
        .filter(|&(_, y, w, _)| window.contains(y, w))
        .map(|(_, y, w, _)| (y, w))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.is_empty() {
        return Err(Error::Coverage("no panel rows fall inside the window".into()));
    }
    let mut x = Vec::with_capacity(labels.len());
    for &(y, w) in &labels {
        let mut count = 0u32;
        for s in states {
            let rate = panel
                .get(s, y, w)
                .ok_or_else(|| Error::Coverage(format!("no rate for {s} {y}-W{w}")))?;
            let base = baseline
                .get(s, w)
                .ok_or_else(|| Error::Coverage(format!("no baseline for {s} week {w}")))?;
            if rate > base {
                count += 1;
            }
        }
        x.push(count);
    }
    BinomialSeries::new(states.len() as u32, labels, x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IidFit {
    pub pi_hat: f64,
    pub log_lik: f64,
    pub aic: f64,
    /// `π̂ ∈ {0, 1}`: the likelihood is maximized on the boundary.
    pub boundary: bool,
}

/// Constant-probability binomial fit on `x[1..]` (the same range the AR(1)
/// partial likelihood uses).
pub fn fit_iid_binomial(series: &BinomialSeries) -> Result<IidFit> {
    if series.len() < 2 {
        return Err(Error::TooShort {
            got: series.len(),
            need: 2,
        });
    }
    fit_iid_counts(&series.x[1..], series.n)
}

/// Constant-probability binomial fit on every count in `x`.
pub fn fit_iid_counts(x: &[u32], n: u32) -> Result<IidFit> {
    if x.is_empty() {
        return Err(Error::TooShort { got: 0, need: 1 });
    }
    let total: u64 = x.iter().map(|&v| v as u64).sum();
    let pi_hat = total as f64 / (n as f64 * x.len() as f64);
    let mut log_lik = 0.0;
    for &v in x {
        log_lik += ln_choose(n, v);
        // 0·ln 0 = 0 on the boundary
        if v > 0 {
            log_lik += v as f64 * pi_hat.ln();
        }
        if v < n {
            log_lik += (n - v) as f64 * (1.0 - pi_hat).ln();
        }
    }
    Ok(IidFit {
        pi_hat,
        log_lik,
        aic: 2.0 - 2.0 * log_lik,
        boundary: pi_hat == 0.0 || pi_hat == 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparison {
    pub simple: IidFit,
    pub ar1_beta: Vec<f64>,
    pub ar1_log_pl: f64,
    pub aic_simple: f64,
    pub aic_ar1: f64,
    pub lr_stat: f64,
    pub df: u32,
    pub p_value: f64,
    pub observations: usize,
}

impl ModelComparison {
    /// Plain `key: value` report.
    pub fn to_report(&self) -> String {
        format!(
            "observations: {}\n\
             simple.pi_hat: {:?}\n\
             simple.log_lik: {:?}\n\
             simple.boundary: {}\n\
             ar1.phi0: {:?}\n\
             ar1.phi1: {:?}\n\
             ar1.log_pl: {:?}\n\
             aic_simple: {:?}\n\
             aic_ar1: {:?}\n\
             lr_stat: {:?}\n\
             df: {}\n\
             p_value: {:?}\n",
            self.observations,
            self.simple.pi_hat,
            self.simple.log_lik,
            self.simple.boundary,
            self.ar1_beta[0],
            self.ar1_beta[1],
            self.ar1_log_pl,
            self.aic_simple,
            self.aic_ar1,
            self.lr_stat,
            self.df,
            self.p_value,
        )
    }
}

/// AIC and likelihood-ratio comparison of the constant-π binomial model
/// against the AR(1) with regressor `(1, X_{t−1})`, both on `t = 1..T`.
pub fn model_comparison(series: &BinomialSeries) -> Result<ModelComparison> {
    model_comparison_with(series, &SolverConfig::default())
}

pub fn model_comparison_with(series: &BinomialSeries, solver: &SolverConfig<f64>) -> Result<ModelComparison> {
    let simple = fit_iid_binomial(series)?;
    let fit: FitResult<f64> = fit_mple(&series.to_sample()?, series.n, solver)?;
    // the constant model is nested at φ₁ = 0; clamp optimizer noise
    let lr_stat = (2.0 * (fit.log_pl - simple.log_lik)).max(0.0);
    Ok(ModelComparison {
        aic_simple: simple.aic,
        aic_ar1: fit.aic(),
        ar1_beta: fit.beta_hat.as_slice().to_vec(),
        ar1_log_pl: fit.log_pl,
        lr_stat,
        df: 1,
        p_value: chi_square_sf(lr_stat, 1.0),
        observations: series.len() - 1,
        simple,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(state: &str, iso_year: i32, week: u32, rate: f64) -> RateRow {
        RateRow {
            state: state.into(),
            iso_year,
            week,
            rate,
        }
    }

    #[test]
    fn duplicate_rows_rejected() {
        let err = RatePanel::from_rows([row("A", 2015, 1, 1.0), row("A", 2015, 1, 2.0)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateRow { week: 1, .. }));
    }

    #[test]
    fn bad_rates_rejected() {
        assert!(RatePanel::from_rows([row("A", 2015, 1, -1.0)]).is_err());
        assert!(RatePanel::from_rows([row("A", 2015, 1, f64::NAN)]).is_err());
        assert!(RatePanel::from_rows([row("A", 2015, 54, 1.0)]).is_err());
    }

    #[test]
    fn baseline_mean_of_two_years() {
        let p = RatePanel::from_rows([row("A", 2013, 5, 1.0), row("A", 2014, 5, 3.0)]).unwrap();
        let b = compute_baseline(&p, &[2013, 2014].into()).unwrap();
        assert_eq!(b.get("A", 5), Some(2.0));
    }

    #[test]
    fn week53_strict_and_fallback() {
        let p = RatePanel::from_rows([
            row("A", 2014, 52, 2.0),
            row("A", 2015, 52, 1.0),
            row("A", 2015, 53, 5.0),
        ])
        .unwrap();
        let years = [2014].into();
        match compute_baseline(&p, &years).unwrap_err() {
            Error::MissingBaseline(v) => assert_eq!(v, vec![("A".to_string(), 53)]),
            e => panic!("unexpected {e:?}"),
        }
        let b = compute_baseline_with(&p, &years, Week53Policy::UseWeek52).unwrap();
        assert_eq!(b.get("A", 53), Some(2.0));
    }

    #[test]
    fn iid_single_observation() {
        let f = fit_iid_counts(&[3], 6).unwrap();
        assert_eq!(f.pi_hat, 0.5);
        let expect = ln_choose(6, 3) + 6.0 * 0.5f64.ln();
        assert!((f.log_lik - expect).abs() < 1e-12);
        assert!(!f.boundary);
        assert!(fit_iid_counts(&[0, 0], 6).unwrap().boundary);
    }

    #[test]
    fn series_csv_round_trip() {
        let s = BinomialSeries::new(6, vec![(2017, 40), (2017, 41)], vec![2, 6]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("# n=6\niso_year,week,x\n"));
        assert_eq!(BinomialSeries::read_csv(&buf[..]).unwrap(), s);
    }

    #[test]
    fn counts_above_n_rejected() {
        assert!(BinomialSeries::new(2, vec![(2017, 1)], vec![3]).is_err());
    }
}
