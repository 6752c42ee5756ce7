//! Daily surveillance series: CSV ingestion, validation, windowing and a
//! seeded synthetic generator.
//!
//! Schema: `date,hospitalized,new_deaths,total_deaths` with ISO-8601 dates.
//! `hospitalized` is the number of people currently in hospital.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{self, IntegrateError, TimeGrid};
use crate::misfit::{MisfitError, QoiTarget};
use crate::model::{ParamVector, StateVector};
use crate::sampling::{sample_component, RngSeed};

pub const CSV_HEADER: [&str; 4] = ["date", "hospitalized", "new_deaths", "total_deaths"];
pub const DEFAULT_RECONCILE_TOL: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: {message}")]
    InvariantViolation { line: u64, message: String },
    #[error("missing dates between {before} and {after}")]
    GapInDates { before: NaiveDate, after: NaiveDate },
    #[error("window {start}..={end} not within {first}..={last}")]
    OutOfRange {
        start: NaiveDate,
        end: NaiveDate,
        first: NaiveDate,
        last: NaiveDate,
    },
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Misfit(#[from] MisfitError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("invalid synthetic-data settings: {0}")]
    InvalidSynthetic(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveillanceDataset {
    dates: Vec<NaiveDate>,
    hospitalized: Vec<f64>,
    new_deaths: Vec<f64>,
    total_deaths: Vec<f64>,
}

impl SurveillanceDataset {
    /// Builds and validates a dataset. `reconcile_tol` bounds both the
    /// mismatch between `new_deaths[k]` and the increment of `total_deaths`
    /// and any decrease of `total_deaths`.
    pub fn new(
        dates: Vec<NaiveDate>,
        hospitalized: Vec<f64>,
        new_deaths: Vec<f64>,
        total_deaths: Vec<f64>,
        reconcile_tol: f64,
    ) -> Result<Self, DataError> {
        let n = dates.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if hospitalized.len() != n || new_deaths.len() != n || total_deaths.len() != n {
            return Err(DataError::InvariantViolation {
                line: 0,
                message: format!(
                    "column lengths differ: {n} dates, {} hospitalized, {} new_deaths, {} total_deaths",
                    hospitalized.len(),
                    new_deaths.len(),
                    total_deaths.len()
                ),
            });
        }
        // Row k sits on line k + 2 of a file with a header.
        let line = |k: usize| k as u64 + 2;
        for k in 0..n {
            for (name, v) in [
                ("hospitalized", hospitalized[k]),
                ("new_deaths", new_deaths[k]),
                ("total_deaths", total_deaths[k]),
            ] {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(DataError::InvariantViolation {
                        line: line(k),
                        message: format!("{name} = {v} must be a nonnegative number"),
                    });
                }
            }
            if k == 0 {
                continue;
            }
            if dates[k] <= dates[k - 1] {
                return Err(DataError::InvariantViolation {
                    line: line(k),
                    message: format!("date {} does not follow {}", dates[k], dates[k - 1]),
                });
            }
            if dates[k - 1].checked_add_days(Days::new(1)) != Some(dates[k]) {
                return Err(DataError::GapInDates {
                    before: dates[k - 1],
                    after: dates[k],
                });
            }
            let step = total_deaths[k] - total_deaths[k - 1];
            if step < -reconcile_tol {
                return Err(DataError::InvariantViolation {
                    line: line(k),
                    message: format!(
                        "total_deaths decreases from {} to {}",
                        total_deaths[k - 1],
                        total_deaths[k]
                    ),
                });
            }
            if (step - new_deaths[k]).abs() > reconcile_tol {
                return Err(DataError::InvariantViolation {
                    line: line(k),
                    message: format!(
                        "new_deaths = {} but total_deaths increased by {step}",
                        new_deaths[k]
                    ),
                });
            }
        }
        Ok(Self {
            dates,
            hospitalized,
            new_deaths,
            total_deaths,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn hospitalized(&self) -> &[f64] {
        &self.hospitalized
    }

    pub fn new_deaths(&self) -> &[f64] {
        &self.new_deaths
    }

    pub fn total_deaths(&self) -> &[f64] {
        &self.total_deaths
    }

    pub fn first_date(&self) -> NaiveDate {
        self.dates[0]
    }

    pub fn last_date(&self) -> NaiveDate {
        self.dates[self.dates.len() - 1]
    }

    /// Rows dated `start..=end`.
    pub fn window(&self, start: NaiveDate, end: NaiveDate) -> Result<Self, DataError> {
        let (first, last) = (self.first_date(), self.last_date());
        if start > end || start < first || end > last {
            return Err(DataError::OutOfRange {
                start,
                end,
                first,
                last,
            });
        }
        let i0 = (start - first).num_days() as usize;
        let i1 = (end - first).num_days() as usize + 1;
        Ok(Self {
            dates: self.dates[i0..i1].to_vec(),
            hospitalized: self.hospitalized[i0..i1].to_vec(),
            new_deaths: self.new_deaths[i0..i1].to_vec(),
            total_deaths: self.total_deaths[i0..i1].to_vec(),
        })
    }

    /// Hospitalized block weighted `omega`, total-death block `1 - omega`.
    pub fn to_target(&self, omega: f64) -> Result<QoiTarget, DataError> {
        Ok(QoiTarget::two_block(
            self.hospitalized.clone(),
            self.total_deaths.clone(),
            omega,
        )?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(csv_io)?;
        for k in 0..self.len() {
            w.write_record([
                self.dates[k].format("%Y-%m-%d").to_string(),
                self.hospitalized[k].to_string(),
                self.new_deaths[k].to_string(),
                self.total_deaths[k].to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> DataError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::Io(io),
        other => DataError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn load_surveillance_csv<P: AsRef<Path>>(path: P, reconcile_tol: f64) -> Result<SurveillanceDataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_surveillance_csv(file, reconcile_tol)
}

pub fn read_surveillance_csv<R: Read>(input: R, reconcile_tol: f64) -> Result<SurveillanceDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| DataError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(DataError::Parse {
            line: 1,
            message: format!("expected header '{}'", CSV_HEADER.join(",")),
        });
    }
    let mut dates = Vec::new();
    let mut hosp = Vec::new();
    let mut new_d = Vec::new();
    let mut total_d = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| DataError::Parse {
            line,
            message: format!("date '{}': {e}", &rec[0]),
        })?;
        let num = |k: usize| -> Result<f64, DataError> {
            rec[k].parse::<f64>().map_err(|e| DataError::Parse {
                line,
                message: format!("{} '{}': {e}", CSV_HEADER[k], &rec[k]),
            })
        };
        dates.push(date);
        hosp.push(num(1)?);
        new_d.push(num(2)?);
        total_d.push(num(3)?);
    }
    SurveillanceDataset::new(dates, hosp, new_d, total_d, reconcile_tol)
}

/// Settings for a model-generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub start: NaiveDate,
    pub days: usize,
    /// Taken from the run's nominal parameters rather than this section.
    #[serde(skip, default = "ParamVector::nominal")]
    pub params: ParamVector,
    /// Relative standard deviation of multiplicative noise; 0 gives the
    /// exact model series.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2020, 5, 1).expect("valid date"),
            days: 31,
            params: ParamVector::nominal(),
            noise: 0.0,
            seed: 0,
        }
    }
}

/// Simulates from `initial_state` and reports `H` and daily death increments,
/// each perturbed by a factor from `N(1, noise^2)` truncated to `[0, 2]`.
pub fn generate_synthetic(
    cfg: &SyntheticConfig,
    initial_state: &StateVector,
    substeps: usize,
) -> Result<SurveillanceDataset, DataError> {
    if cfg.days == 0 {
        return Err(DataError::InvalidSynthetic("days must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(DataError::InvalidSynthetic(format!("noise {} outside [0, 1]", cfg.noise)));
    }
    let traj = integrate::integrate(initial_state, &cfg.params, &TimeGrid::daily(cfg.days, substeps))?;
    let mut rng = RngSeed(cfg.seed).stream(0);
    let mut factor = || -> f64 {
        if cfg.noise == 0.0 {
            1.0
        } else {
            sample_component(1.0, cfg.noise, 0.0, 2.0, &mut rng).expect("unit window has mass")
        }
    };
    let mut dates = Vec::with_capacity(cfg.days);
    let mut hosp = Vec::with_capacity(cfg.days);
    let mut new_d = Vec::with_capacity(cfg.days);
    let mut total_d = Vec::with_capacity(cfg.days);
    for (k, u) in traj.states.iter().enumerate() {
        dates.push(cfg.start + Days::new(k as u64));
        hosp.push(u.h * factor());
        if k == 0 {
            new_d.push(0.0);
            total_d.push(u.d);
        } else {
            let inc = (u.d - traj.states[k - 1].d).max(0.0) * factor();
            new_d.push(inc);
            total_d.push(total_d[k - 1] + inc);
        }
    }
    SurveillanceDataset::new(dates, hosp, new_d, total_d, DEFAULT_RECONCILE_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, m, d).unwrap()
    }

    fn may_june_csv() -> String {
        let mut s = String::from("date,hospitalized,new_deaths,total_deaths\n");
        let mut total = 100.0;
        let mut d = date(5, 1);
        for k in 0..61 {
            let nd = (k % 5) as f64;
            if k > 0 {
                total += nd;
            }
            s.push_str(&format!("{d},{},{},{}\n", 500 + k, if k > 0 { nd } else { 0.0 }, total));
            d = d + Days::new(1);
        }
        s
    }

    fn load(s: &str) -> Result<SurveillanceDataset, DataError> {
        read_surveillance_csv(s.as_bytes(), DEFAULT_RECONCILE_TOL)
    }

    #[test]
    fn may_file_has_31_rows() {
        let ds = load(&may_june_csv()).unwrap();
        let may = ds.window(date(5, 1), date(5, 31)).unwrap();
        assert_eq!(may.len(), 31);
        assert_eq!(may.first_date(), date(5, 1));
        assert_eq!(may.hospitalized()[30], 530.0);
    }

    #[test]
    fn gap_is_reported() {
        let s: String = may_june_csv()
            .lines()
            .filter(|l| !l.starts_with("2020-05-10"))
            .map(|l| format!("{l}\n"))
            .collect();
        match load(&s) {
            Err(DataError::GapInDates { before, after }) => {
                assert_eq!(before, date(5, 9));
                assert_eq!(after, date(5, 11));
            }
            other => panic!("expected gap, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut s = may_june_csv();
        s = s.replacen("2020-05-03,502", "2020-05-03,abc", 1);
        match load(&s) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        match load("date,hosp,new_deaths,total_deaths\n") {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected header error, got {other:?}"),
        }
    }

    #[test]
    fn decreasing_deaths_beyond_tolerance() {
        let s = "date,hospitalized,new_deaths,total_deaths\n\
                 2020-05-01,1,0,10\n2020-05-02,1,0,9\n";
        assert!(matches!(
            load(s),
            Err(DataError::InvariantViolation { line: 3, .. })
        ));
        assert!(read_surveillance_csv(s.as_bytes(), 1.5).is_ok());
    }

    #[test]
    fn unreconciled_new_deaths() {
        let s = "date,hospitalized,new_deaths,total_deaths\n\
                 2020-05-01,1,0,10\n2020-05-02,1,7,12\n";
        assert!(matches!(load(s), Err(DataError::InvariantViolation { .. })));
        let s = "date,hospitalized,new_deaths,total_deaths\n\
                 2020-05-01,1,0,10\n2020-05-02,-1,2,12\n";
        assert!(matches!(load(s), Err(DataError::InvariantViolation { .. })));
    }

    #[test]
    fn windows() {
        let ds = load(&may_june_csv()).unwrap();
        assert_eq!(ds.window(ds.first_date(), ds.last_date()).unwrap(), ds);
        let one = ds.window(date(6, 3), date(6, 3)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.dates(), &[date(6, 3)]);
        let w = ds.window(date(5, 20), date(6, 10)).unwrap();
        assert_eq!(w.window(date(5, 20), date(6, 10)).unwrap(), w);
        assert!(matches!(
            ds.window(date(4, 30), date(5, 3)),
            Err(DataError::OutOfRange { .. })
        ));
        assert!(matches!(
            ds.window(date(5, 5), date(5, 3)),
            Err(DataError::OutOfRange { .. })
        ));
    }

    #[test]
    fn target_blocks() {
        let ds = load(&may_june_csv()).unwrap().window(date(5, 1), date(5, 31)).unwrap();
        let t = ds.to_target(0.75).unwrap();
        assert_eq!(t.weights(), &[0.75, 0.25]);
        assert_eq!(t.blocks()[0].values, ds.hospitalized());
        assert_eq!(t.blocks()[1].values, ds.total_deaths());
        assert!(t.blocks().iter().all(|b| b.values.len() == 31));
        let d_only = ds.to_target(0.0).unwrap();
        assert_eq!(d_only.weights(), &[0.0, 1.0]);
        let h = vec![1.0; 31];
        assert_eq!(
            crate::misfit::misfit(&[h.clone(), ds.total_deaths().to_vec()], &d_only).unwrap(),
            0.0
        );
        assert!(ds.to_target(1.2).is_err());
    }

    #[test]
    fn synthetic_round_trip_is_exact() {
        let cfg = SyntheticConfig {
            noise: 0.1,
            seed: 7,
            ..SyntheticConfig::default()
        };
        let u0 = StateVector {
            s: 5.3e6,
            e: 4.0e4,
            i: 3.0e4,
            a: 2.5e4,
            h: 1000.0,
            r: 1.0e5,
            d: 150.0,
            n: 5.5e6 - 150.0,
        };
        let ds = generate_synthetic(&cfg, &u0, 10).unwrap();
        assert_eq!(ds.len(), 31);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_surveillance_csv(buf.as_slice(), DEFAULT_RECONCILE_TOL).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.hospitalized().iter().zip(ds.hospitalized()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(generate_synthetic(&cfg, &u0, 10).unwrap(), ds);
    }

    #[test]
    fn noiseless_synthetic_matches_model() {
        let cfg = SyntheticConfig::default();
        let u0 = StateVector::virgin(1.0e6, 1000.0);
        let ds = generate_synthetic(&cfg, &u0, 10).unwrap();
        let traj = integrate::integrate(&u0, &cfg.params, &TimeGrid::daily(31, 10)).unwrap();
        let qoi = integrate::extract_qoi(&traj);
        assert_eq!(ds.hospitalized(), qoi.hospitalized.as_slice());
        for (a, b) in ds.total_deaths().iter().zip(&qoi.deaths) {
            approx::assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }
}
