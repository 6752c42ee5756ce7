//! Fixed-step classical Runge-Kutta integration on a uniform output grid.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, ModelError, ParamVector, StateVector, STATE_DIM, STATE_LABELS};

/// Relative size of a negative undershoot that is treated as rounding.
pub const NEGATIVE_CLAMP_TOL: f64 = 1e-9;

/// Relative drift allowed in the population balance identities.
pub const CONSERVATION_TOL: f64 = 1e-6;

/// A state larger than this multiple of the initial population is a blow-up.
pub const BLOWUP_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("integration blew up at t = {t}: {reason}")]
    IntegrationBlowup { t: f64, reason: String },
    #[error("compartment {label} went negative ({value}) at t = {t}")]
    NegativeState { t: f64, label: &'static str, value: f64 },
    #[error("population balance drifted by {drift:e} (relative) at t = {t}")]
    ConservationViolated { t: f64, drift: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid initial state: {0}")]
    InvalidState(String),
}

/// Uniform output grid with internal substepping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub output_step: f64,
    pub substeps: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            t0: 0.0,
            t_end: 730.0,
            output_step: 1.0,
            substeps: 10,
        }
    }
}

impl TimeGrid {
    /// Daily grid over `[0, days - 1]`, i.e. one output per day.
    pub fn daily(days: usize, substeps: usize) -> Self {
        Self {
            t0: 0.0,
            t_end: days.saturating_sub(1) as f64,
            output_step: 1.0,
            substeps,
        }
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        if !(self.t_end > self.t0) {
            return Err(IntegrateError::InvalidGrid(format!(
                "t_end ({}) must exceed t0 ({})",
                self.t_end, self.t0
            )));
        }
        if !(self.output_step > 0.0) || !self.output_step.is_finite() {
            return Err(IntegrateError::InvalidGrid(format!(
                "output_step must be positive, got {}",
                self.output_step
            )));
        }
        if self.substeps == 0 {
            return Err(IntegrateError::InvalidGrid("substeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of output intervals. A trailing partial interval is dropped.
    pub fn intervals(&self) -> usize {
        ((self.t_end - self.t0) / self.output_step + 1e-9).floor() as usize
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.intervals())
            .map(|k| self.t0 + k as f64 * self.output_step)
            .collect()
    }
}

/// States sampled on the output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// Running integral of the admission flux `rho * I`, one entry per time.
    pub cumulative_admissions: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&StateVector> {
        self.states.last()
    }

    /// Writes `t,S,E,I,A,H,R,D,N` rows with round-trip precision.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,{}", STATE_LABELS.join(","))?;
        for (t, u) in self.times.iter().zip(&self.states) {
            write!(out, "{t}")?;
            for v in u.to_array() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Hospitalization and total-death series on the output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QoiSeries {
    pub hospitalized: Vec<f64>,
    pub deaths: Vec<f64>,
}

impl QoiSeries {
    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        vec![self.hospitalized, self.deaths]
    }
}

pub fn extract_qoi(traj: &Trajectory) -> QoiSeries {
    QoiSeries {
        hospitalized: traj.states.iter().map(|u| u.h).collect(),
        deaths: traj.states.iter().map(|u| u.d).collect(),
    }
}

// Augmented state: the eight compartments plus cumulative admissions.
type Aug = [f64; STATE_DIM + 1];

fn aug_rhs(t: f64, y: &Aug, x: &ParamVector) -> Result<Aug, ModelError> {
    let mut head = [0.0; STATE_DIM];
    head.copy_from_slice(&y[..STATE_DIM]);
    let u = StateVector::from_array(head);
    let du = model::rhs(t, &u, x)?.to_array();
    let mut out = [0.0; STATE_DIM + 1];
    out[..STATE_DIM].copy_from_slice(&du);
    out[STATE_DIM] = model::admission_rate(&u, x);
    Ok(out)
}

fn axpy(y: &Aug, h: f64, k: &Aug) -> Aug {
    let mut out = *y;
    for (o, kv) in out.iter_mut().zip(k) {
        *o += h * kv;
    }
    out
}

fn rk4_step(t: f64, y: &Aug, h: f64, x: &ParamVector) -> Result<Aug, ModelError> {
    let k1 = aug_rhs(t, y, x)?;
    let k2 = aug_rhs(t + 0.5 * h, &axpy(y, 0.5 * h, &k1), x)?;
    let k3 = aug_rhs(t + 0.5 * h, &axpy(y, 0.5 * h, &k2), x)?;
    let k4 = aug_rhs(t + h, &axpy(y, h, &k3), x)?;
    let mut out = *y;
    for j in 0..out.len() {
        out[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    Ok(out)
}

/// Integrates the model from `u0` over `grid`.
///
/// Each output interval is split into `grid.substeps` RK4 steps. After every
/// step, undershoots below zero smaller than `1e-9 * N0` are clamped; larger
/// ones are errors. The balance identities `N + D = N0 + D0` and
/// `S+E+I+A+H+R-N = const` are checked at every output instant.
pub fn integrate(
    u0: &StateVector,
    x: &ParamVector,
    grid: &TimeGrid,
) -> Result<Trajectory, IntegrateError> {
    grid.validate()?;
    if !(u0.n > 0.0) {
        return Err(ModelError::NonpositivePopulation(u0.n).into());
    }
    if !u0.is_nonnegative() || u0.to_array().iter().any(|v| !v.is_finite()) {
        return Err(IntegrateError::InvalidState(format!("{u0:?}")));
    }

    let n0 = u0.n;
    let alive0 = u0.n + u0.d;
    let residual0 = u0.living_residual();
    let clamp_tol = NEGATIVE_CLAMP_TOL * n0;
    let ceiling = BLOWUP_FACTOR * n0;

    let intervals = grid.intervals();
    let h = grid.output_step / grid.substeps as f64;

    let mut times = Vec::with_capacity(intervals + 1);
    let mut states = Vec::with_capacity(intervals + 1);
    let mut admissions = Vec::with_capacity(intervals + 1);

    let mut y: Aug = [0.0; STATE_DIM + 1];
    y[..STATE_DIM].copy_from_slice(&u0.to_array());
    times.push(grid.t0);
    states.push(*u0);
    admissions.push(0.0);

    for k in 0..intervals {
        let t_start = grid.t0 + k as f64 * grid.output_step;
        for s in 0..grid.substeps {
            let t = t_start + s as f64 * h;
            y = rk4_step(t, &y, h, x)?;
            for (j, v) in y[..STATE_DIM].iter_mut().enumerate() {
                if !v.is_finite() || *v > ceiling {
                    return Err(IntegrateError::IntegrationBlowup {
                        t: t + h,
                        reason: format!("{} = {}", STATE_LABELS[j], v),
                    });
                }
                if *v < 0.0 {
                    if *v < -clamp_tol {
                        return Err(IntegrateError::NegativeState {
                            t: t + h,
                            label: STATE_LABELS[j],
                            value: *v,
                        });
                    }
                    *v = 0.0;
                }
            }
        }
        let t_out = grid.t0 + (k + 1) as f64 * grid.output_step;
        let mut head = [0.0; STATE_DIM];
        head.copy_from_slice(&y[..STATE_DIM]);
        let u = StateVector::from_array(head);

        let drift_alive = ((u.n + u.d) - alive0).abs() / alive0;
        let drift_living = (u.living_residual() - residual0).abs() / n0;
        let drift = drift_alive.max(drift_living);
        if drift > CONSERVATION_TOL {
            return Err(IntegrateError::ConservationViolated { t: t_out, drift });
        }

        times.push(t_out);
        states.push(u);
        admissions.push(y[STATE_DIM]);
    }

    Ok(Trajectory {
        times,
        states,
        cumulative_admissions: admissions,
    })
}
