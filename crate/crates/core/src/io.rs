//! File formats: series and stream CSV, fit and monitor JSON reports,
//! threshold tables and the per-update monitor log.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value reads back bit-identical.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::calibration::{ThresholdEntry, ThresholdTable};
use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::model::SeriesSample;
use crate::monitoring::MonitorResult;

fn header_with_w(first: &str, l: usize) -> Vec<String> {
    let mut h = vec![first.to_string(), "x".to_string()];
    h.extend((1..=l).map(|i| format!("w{i}")));
    h
}

fn count_w_columns(headers: &csv::StringRecord, first: &str, what: &str) -> Result<usize> {
    if headers.get(0) != Some(first) || headers.get(1) != Some("x") {
        return Err(Error::Parse(format!("{what}: header must start with `{first},x`")));
    }
    for (i, h) in headers.iter().skip(2).enumerate() {
        if h != format!("w{}", i + 1) {
            return Err(Error::Parse(format!("{what}: expected column `w{}`, found `{h}`", i + 1)));
        }
    }
    Ok(headers.len() - 2)
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str, line: u64) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| Error::Parse(format!("{what}: line {line}: cannot parse `{s}`: {e}")))
}

/// `t,x,w1..wl`; the row `t = 0` leaves the `w` fields empty.
pub fn write_series_csv<W: Write>(series: &SeriesSample<f64>, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let l = series.l();
    wtr.write_record(header_with_w("t", l))?;
    for (t, x) in series.x().iter().enumerate() {
        let mut row = vec![t.to_string(), x.to_string()];
        if t == 0 {
            row.extend(std::iter::repeat_n(String::new(), l));
        } else {
            row.extend(series.w_row(t).iter().map(|v| v.to_string()));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_series_csv<R: Read>(r: R) -> Result<SeriesSample<f64>> {
    let what = "series csv";
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let l = count_w_columns(rdr.headers()?, "t", what)?;
    let mut x = Vec::new();
    let mut w = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let t: usize = parse_field(&rec[0], what, line)?;
        if t != x.len() {
            return Err(Error::Parse(format!("{what}: line {line}: expected t = {}, got {t}", x.len())));
        }
        x.push(parse_field::<u32>(&rec[1], what, line)?);
        if t > 0 {
            for f in rec.iter().skip(2) {
                w.push(parse_field::<f64>(f, what, line)?);
            }
        }
    }
    SeriesSample::new(x, w, l, None)
}

/// Incremental reader over `k,x,w1..wl` rows.
pub struct StreamReader<R> {
    records: csv::StringRecordsIntoIter<R>,
    l: usize,
    next_k: usize,
}

impl<R: Read> StreamReader<R> {
    pub fn new(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let l = count_w_columns(rdr.headers()?, "k", "stream csv")?;
        Ok(Self {
            records: rdr.into_records(),
            l,
            next_k: 1,
        })
    }

    pub fn l(&self) -> usize {
        self.l
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<(u32, Vec<f64>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let what = "stream csv";
        let rec = self.records.next()?;
        Some((|| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let k: usize = parse_field(&rec[0], what, line)?;
            if k != self.next_k {
                return Err(Error::Parse(format!("{what}: line {line}: expected k = {}, got {k}", self.next_k)));
            }
            self.next_k += 1;
            let x = parse_field::<u32>(&rec[1], what, line)?;
            let w = rec
                .iter()
                .skip(2)
                .map(|f| parse_field::<f64>(f, what, line))
                .collect::<Result<Vec<_>>>()?;
            Ok((x, w))
        })())
    }
}

/// Writes `(x, w)` pairs as `k,x,w1..wl` with `k` starting at 1.
pub fn write_stream_csv<W: Write>(stream: &[(u32, Vec<f64>)], l: usize, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header_with_w("k", l))?;
    for (k, (x, wv)) in stream.iter().enumerate() {
        let mut row = vec![(k + 1).to_string(), x.to_string()];
        row.extend(wv.iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub beta_hat: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Asymptotic covariance of `√m(β̂ − β)`.
    pub covariance: Vec<Vec<f64>>,
    pub sigma0_hat: Vec<Vec<f64>>,
    pub log_pl: f64,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_score_norm: f64,
    pub hit_boundary: bool,
    pub m: usize,
}

impl From<&FitResult<f64>> for FitReport {
    fn from(f: &FitResult<f64>) -> Self {
        Self {
            beta_hat: f.beta_hat.as_slice().to_vec(),
            standard_errors: f.standard_errors(),
            covariance: f.covariance.rows(),
            sigma0_hat: f.sigma0_hat.rows(),
            log_pl: f.log_pl,
            aic: f.aic(),
            iterations: f.iterations,
            converged: f.converged,
            final_score_norm: f.final_score_norm,
            hit_boundary: f.hit_boundary,
            m: f.m,
        }
    }
}

pub fn write_json<T: Serialize, W: Write>(value: &T, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_fit_report<R: Read>(r: R) -> Result<FitReport> {
    Ok(serde_json::from_reader(r)?)
}

/// `gamma,alpha,c,reps,grid_m,N,seed`, one row per cell.
pub fn write_threshold_csv<W: Write>(table: &ThresholdTable<f64>, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["gamma", "alpha", "c", "reps", "grid_m", "N", "seed"])?;
    for e in &table.entries {
        wtr.write_record([
            e.gamma.to_string(),
            e.alpha.to_string(),
            e.c.to_string(),
            table.reps.to_string(),
            table.grid_m.to_string(),
            table.horizon.to_string(),
            table.seed.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct ThresholdRow {
    gamma: f64,
    alpha: f64,
    c: f64,
    reps: usize,
    grid_m: usize,
    #[serde(rename = "N")]
    horizon: f64,
    seed: u64,
}

pub fn read_threshold_csv<R: Read>(r: R) -> Result<ThresholdTable<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut table: Option<ThresholdTable<f64>> = None;
    for row in rdr.deserialize::<ThresholdRow>() {
        let row = row?;
        let t = table.get_or_insert_with(|| ThresholdTable {
            entries: Vec::new(),
            reps: row.reps,
            grid_m: row.grid_m,
            horizon: row.horizon,
            seed: row.seed,
        });
        if t.reps != row.reps || t.grid_m != row.grid_m || t.horizon != row.horizon || t.seed != row.seed {
            return Err(Error::Parse("threshold csv: rows disagree on reps/grid_m/N/seed".into()));
        }
        t.entries.push(ThresholdEntry {
            gamma: row.gamma,
            alpha: row.alpha,
            c: row.c,
            tail_warning: false,
        });
    }
    table.ok_or_else(|| Error::Parse("threshold csv: no rows".into()))
}

/// Line-per-update `k,statistic,threshold,alarm` log, flushed per row.
pub struct MonitorLog<W: Write> {
    wtr: csv::Writer<W>,
}

impl<W: Write> MonitorLog<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["k", "statistic", "threshold", "alarm"])?;
        Ok(Self { wtr })
    }

    pub fn record(&mut self, k: usize, statistic: f64, threshold: f64, alarm: bool) -> Result<()> {
        self.wtr.write_record([
            k.to_string(),
            statistic.to_string(),
            threshold.to_string(),
            u8::from(alarm).to_string(),
        ])?;
        self.wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub m: usize,
    pub horizon: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// `None` encodes an infinite threshold (monitoring without alarms).
    pub threshold: Option<f64>,
    pub beta_hat: Vec<f64>,
    pub alarm: bool,
    pub alarm_at: Option<usize>,
    pub observations: usize,
    pub max_k: usize,
    pub truncated: bool,
    pub max_statistic: Option<f64>,
}

impl MonitorReport {
    pub fn from_result(
        result: &MonitorResult<f64>,
        m: usize,
        horizon: f64,
        gamma: f64,
        alpha: f64,
        threshold: f64,
        beta_hat: &[f64],
    ) -> Self {
        Self {
            m,
            horizon,
            gamma,
            alpha,
            threshold: threshold.is_finite().then_some(threshold),
            beta_hat: beta_hat.to_vec(),
            alarm: result.alarm_at.is_some(),
            alarm_at: result.alarm_at,
            observations: result.statistic_history.len(),
            max_k: (horizon * m as f64).floor() as usize,
            truncated: result.truncated,
            max_statistic: result.statistic_history.iter().copied().reduce(f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_series, Init, ModelSpec};

    #[test]
    fn series_round_trip_is_exact() {
        let s = simulate_series(&ModelSpec::benchmark(), 50, 9, Init::default()).unwrap();
        let mut buf = Vec::new();
        write_series_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x,w1\n0,"));
        assert!(text.lines().nth(1).unwrap().ends_with(','));
        let back = read_series_csv(&buf[..]).unwrap();
        assert_eq!(back.x(), s.x());
        assert_eq!(back.w(), s.w());
    }

    #[test]
    fn stream_round_trip_and_ordering() {
        let stream = vec![(3, vec![0.5, 1.25]), (4, vec![1.0 / 3.0, 2.0])];
        let mut buf = Vec::new();
        write_stream_csv(&stream, 2, &mut buf).unwrap();
        let rdr = StreamReader::new(&buf[..]).unwrap();
        assert_eq!(rdr.l(), 2);
        let back: Vec<_> = rdr.collect::<Result<_>>().unwrap();
        assert_eq!(back, stream);
        let bad = "k,x,w1\n2,1,0.5\n";
        assert!(StreamReader::new(bad.as_bytes()).unwrap().next().unwrap().is_err());
    }

    #[test]
    fn threshold_round_trip() {
        let table = ThresholdTable {
            entries: vec![ThresholdEntry {
                gamma: 0.25,
                alpha: 0.05,
                c: 8.428_512_345_678_9,
                tail_warning: false,
            }],
            reps: 10_000,
            grid_m: 1000,
            horizon: 3.0,
            seed: 42,
        };
        let mut buf = Vec::new();
        write_threshold_csv(&table, &mut buf).unwrap();
        assert_eq!(read_threshold_csv(&buf[..]).unwrap(), table);
    }

    #[test]
    fn bad_header_reports_column() {
        let err = read_series_csv("t,x,v1\n0,1,\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("w1"));
    }
}
