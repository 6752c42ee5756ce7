//! Dynamically consistent initial conditions.
//!
//! A fully susceptible population seeded with a few exposed individuals is
//! simulated once. For each reference observation (e.g. hospitalized count)
//! the simulated state whose matching compartment is closest to the
//! reference is taken, and the matched states are blended convexly. Every
//! candidate lies on an actual model trajectory, so all compartments are
//! mutually compatible.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{self, IntegrateError, TimeGrid, Trajectory};
use crate::model::{ParamVector, StateVector, STATE_LABELS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcError {
    #[error("blend weights must be nonnegative and sum to 1, got {0:?}")]
    WeightSumInvalid(Vec<f64>),
    #[error("{states} states but {weights} weights")]
    CountMismatch { states: usize, weights: usize },
    #[error("reference value must be nonnegative, got {0}")]
    NegativeReference(f64),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("invalid virgin-population configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

/// A state-vector coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compartment {
    S,
    E,
    I,
    A,
    H,
    R,
    D,
    N,
}

impl Compartment {
    pub fn of(self, u: &StateVector) -> f64 {
        match self {
            Compartment::S => u.s,
            Compartment::E => u.e,
            Compartment::I => u.i,
            Compartment::A => u.a,
            Compartment::H => u.h,
            Compartment::R => u.r,
            Compartment::D => u.d,
            Compartment::N => u.n,
        }
    }
}

impl fmt::Display for Compartment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Compartment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "S" => Compartment::S,
            "E" => Compartment::E,
            "I" => Compartment::I,
            "A" => Compartment::A,
            "H" => Compartment::H,
            "R" => Compartment::R,
            "D" => Compartment::D,
            "N" => Compartment::N,
            other => return Err(format!("unknown compartment '{other}'")),
        })
    }
}

/// Observed value of one compartment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcReference {
    pub component: Compartment,
    pub value: f64,
}

impl IcReference {
    pub fn new(component: Compartment, value: f64) -> Result<Self, IcError> {
        if !(value >= 0.0) {
            return Err(IcError::NegativeReference(value));
        }
        Ok(Self { component, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VirginConfig {
    pub n0: f64,
    pub e0: f64,
    /// Days.
    pub horizon: f64,
    /// Taken from the run's nominal parameters rather than this section.
    #[serde(skip, default = "ParamVector::nominal")]
    pub params: ParamVector,
}

impl Default for VirginConfig {
    fn default() -> Self {
        Self {
            n0: 5.5e6,
            e0: 1.0,
            horizon: 730.0,
            params: ParamVector::nominal(),
        }
    }
}

impl VirginConfig {
    pub fn validate(&self) -> Result<(), IcError> {
        if !(self.n0 > 0.0) {
            return Err(IcError::InvalidConfig(format!("n0 must be positive, got {}", self.n0)));
        }
        if !(self.e0 >= 0.0 && self.e0 <= self.n0) {
            return Err(IcError::InvalidConfig(format!("e0 = {} not in [0, n0]", self.e0)));
        }
        if !self.params.is_admissible() {
            return Err(IcError::InvalidConfig(format!("inadmissible parameters {:?}", self.params)));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> StateVector {
        StateVector::virgin(self.n0, self.e0)
    }

    /// Daily grid over the horizon.
    pub fn grid(&self, substeps: usize) -> TimeGrid {
        TimeGrid {
            t0: 0.0,
            t_end: self.horizon,
            output_step: 1.0,
            substeps,
        }
    }
}

/// Headline figures of an unmitigated outbreak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirginSummary {
    pub peak_active: f64,
    pub peak_active_day: f64,
    pub peak_hospitalized: f64,
    pub peak_hospitalized_day: f64,
    pub peak_daily_deaths: f64,
    pub peak_daily_deaths_day: f64,
    pub cumulative_admissions: f64,
    pub cumulative_deaths: f64,
    pub final_susceptible_fraction: f64,
    pub final_recovered_fraction: f64,
}

impl VirginSummary {
    /// Fractions are relative to `n0`; daily deaths are increments of `D`
    /// between consecutive outputs.
    pub fn from_trajectory(traj: &Trajectory, n0: f64) -> Result<Self, IcError> {
        let first = traj.states.first().ok_or(IcError::EmptyTrajectory)?;
        let last = traj.last().ok_or(IcError::EmptyTrajectory)?;
        let argmax = |f: &dyn Fn(usize) -> f64, from: usize| {
            (from..traj.len()).fold((from, f64::NEG_INFINITY), |(bk, bv), k| {
                let v = f(k);
                if v > bv {
                    (k, v)
                } else {
                    (bk, bv)
                }
            })
        };
        let (ka, active) = argmax(&|k| traj.states[k].active(), 0);
        let (kh, hosp) = argmax(&|k| traj.states[k].h, 0);
        let (kd, daily) = if traj.len() > 1 {
            argmax(&|k| traj.states[k].d - traj.states[k - 1].d, 1)
        } else {
            (0, 0.0)
        };
        Ok(Self {
            peak_active: active,
            peak_active_day: traj.times[ka],
            peak_hospitalized: hosp,
            peak_hospitalized_day: traj.times[kh],
            peak_daily_deaths: daily,
            peak_daily_deaths_day: traj.times[kd],
            cumulative_admissions: traj.cumulative_admissions[traj.len() - 1],
            cumulative_deaths: last.d - first.d,
            final_susceptible_fraction: last.s / n0,
            final_recovered_fraction: last.r / n0,
        })
    }
}

/// Simulates the virgin population over `grid`.
pub fn virgin_run(cfg: &VirginConfig, grid: &TimeGrid) -> Result<Trajectory, IcError> {
    cfg.validate()?;
    Ok(integrate::integrate(&cfg.initial_state(), &cfg.params, grid)?)
}

/// Output-grid state whose `reference.component` is closest to
/// `reference.value`; the earliest instant wins ties.
pub fn find_state_matching(traj: &Trajectory, reference: &IcReference) -> Result<StateVector, IcError> {
    let idx = matching_index(traj, reference)?;
    Ok(traj.states[idx])
}

/// Index of the state returned by [`find_state_matching`].
pub fn matching_index(traj: &Trajectory, reference: &IcReference) -> Result<usize, IcError> {
    let mut best: Option<(usize, f64)> = None;
    for (k, u) in traj.states.iter().enumerate() {
        let gap = (reference.component.of(u) - reference.value).abs();
        if best.map_or(true, |(_, g)| gap < g) {
            best = Some((k, gap));
        }
    }
    best.map(|(k, _)| k).ok_or(IcError::EmptyTrajectory)
}

/// Componentwise convex combination of `states`.
pub fn blend_states(states: &[StateVector], weights: &[f64]) -> Result<StateVector, IcError> {
    if states.len() != weights.len() || states.is_empty() {
        return Err(IcError::CountMismatch {
            states: states.len(),
            weights: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(IcError::WeightSumInvalid(weights.to_vec()));
    }
    let mut acc = [0.0; 8];
    for (u, w) in states.iter().zip(weights) {
        for (a, v) in acc.iter_mut().zip(u.to_array()) {
            *a += w * v;
        }
    }
    Ok(StateVector::from_array(acc))
}

/// Matched states for each reference and their blend.
#[derive(Debug, Clone, PartialEq)]
pub struct InferredState {
    pub matches: Vec<(IcReference, f64, StateVector)>,
    pub blended: StateVector,
}

/// Matches every reference on `traj` and blends with `weights`.
pub fn infer_initial_state(
    traj: &Trajectory,
    references: &[IcReference],
    weights: &[f64],
) -> Result<InferredState, IcError> {
    if references.len() != weights.len() {
        return Err(IcError::CountMismatch {
            states: references.len(),
            weights: weights.len(),
        });
    }
    let mut matches = Vec::with_capacity(references.len());
    for r in references {
        let k = matching_index(traj, r)?;
        matches.push((*r, traj.times[k], traj.states[k]));
    }
    let states: Vec<StateVector> = matches.iter().map(|m| m.2).collect();
    let blended = blend_states(&states, weights)?;
    Ok(InferredState { matches, blended })
}

/// Writes a single `S,E,I,A,H,R,D,N` row.
pub fn write_state_csv<W: Write>(u: &StateVector, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", STATE_LABELS.join(","))?;
    let row: Vec<String> = u.to_array().iter().map(|v| v.to_string()).collect();
    writeln!(out, "{}", row.join(","))
}

/// Reads the format written by [`write_state_csv`].
pub fn read_state_csv<R: std::io::Read>(input: R) -> Result<StateVector, csv::Error> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != STATE_LABELS {
        return Err(invalid(format!("expected header {}", STATE_LABELS.join(","))));
    }
    let row = rdr
        .records()
        .next()
        .ok_or_else(|| invalid("missing state row".into()))??;
    let mut v = [0.0; 8];
    for (k, f) in row.iter().enumerate().take(8) {
        v[k] = f.trim().parse().map_err(|e| invalid(format!("column {k}: {e}")))?;
    }
    Ok(StateVector::from_array(v))
}

fn invalid(msg: String) -> csv::Error {
    csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}
