//! SEIR(+AHD) compartmental dynamics.
//!
//! The state carries eight compartments `(S, E, I, A, H, R, D, N)` where `N`
//! is the alive population. The vector field is non-autonomous through the
//! transmission rate, which moves smoothly between two plateaus.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("alive population must be positive, got N = {0}")]
    NonpositivePopulation(f64),
}

/// Number of compartments in [`StateVector`].
pub const STATE_DIM: usize = 8;

/// Number of calibrated parameters in [`ParamVector`].
pub const PARAM_DIM: usize = 12;

/// Column labels of [`StateVector`], in storage order.
pub const STATE_LABELS: [&str; STATE_DIM] = ["S", "E", "I", "A", "H", "R", "D", "N"];

/// Parameter names, in calibration-vector order.
pub const PARAM_NAMES: [&str; PARAM_DIM] = [
    "beta0", "alpha", "f_e", "gamma", "rho", "delta", "kappa_a", "kappa_h", "eps_h", "beta_inf",
    "eta", "t_beta",
];

/// Population in each compartment at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub a: f64,
    pub h: f64,
    pub r: f64,
    pub d: f64,
    pub n: f64,
}

impl StateVector {
    /// Fully susceptible population of size `n0` with `e0` exposed individuals.
    pub fn virgin(n0: f64, e0: f64) -> Self {
        Self {
            s: n0 - e0,
            e: e0,
            n: n0,
            ..Self::default()
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.s, self.e, self.i, self.a, self.h, self.r, self.d, self.n]
    }

    pub fn from_array(v: [f64; STATE_DIM]) -> Self {
        Self {
            s: v[0],
            e: v[1],
            i: v[2],
            a: v[3],
            h: v[4],
            r: v[5],
            d: v[6],
            n: v[7],
        }
    }

    /// Exposed plus infectious plus asymptomatic.
    pub fn active(&self) -> f64 {
        self.e + self.i + self.a
    }

    /// `(S+E+I+A+H+R) - N`; constant along exact solutions.
    pub fn living_residual(&self) -> f64 {
        self.s + self.e + self.i + self.a + self.h + self.r - self.n
    }

    pub fn is_nonnegative(&self) -> bool {
        self.to_array().iter().all(|v| *v >= 0.0)
    }
}

/// Model coefficients in calibration order.
///
/// Rates are per day, `t_beta` is in days, and the remaining entries are
/// dimensionless factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamVector {
    pub beta0: f64,
    pub alpha: f64,
    pub f_e: f64,
    pub gamma: f64,
    pub rho: f64,
    pub delta: f64,
    pub kappa_a: f64,
    pub kappa_h: f64,
    pub eps_h: f64,
    pub beta_inf: f64,
    pub eta: f64,
    pub t_beta: f64,
}

impl ParamVector {
    /// Plausible values for a COVID-19 outbreak in a population with no
    /// prior immunity.
    pub fn nominal() -> Self {
        Self {
            beta0: 1.0 / 7.0,
            alpha: 1.0 / 5.0,
            f_e: 0.8,
            gamma: 1.0 / 14.0,
            rho: 1.0 / 700.0,
            delta: 1.0 / 14000.0,
            kappa_a: 0.0010,
            kappa_h: 0.05,
            eps_h: 0.2,
            beta_inf: 1.0 / 7.0,
            eta: 5.0,
            t_beta: 60.0,
        }
    }

    pub fn to_array(&self) -> [f64; PARAM_DIM] {
        [
            self.beta0,
            self.alpha,
            self.f_e,
            self.gamma,
            self.rho,
            self.delta,
            self.kappa_a,
            self.kappa_h,
            self.eps_h,
            self.beta_inf,
            self.eta,
            self.t_beta,
        ]
    }

    pub fn from_array(v: [f64; PARAM_DIM]) -> Self {
        Self {
            beta0: v[0],
            alpha: v[1],
            f_e: v[2],
            gamma: v[3],
            rho: v[4],
            delta: v[5],
            kappa_a: v[6],
            kappa_h: v[7],
            eps_h: v[8],
            beta_inf: v[9],
            eta: v[10],
            t_beta: v[11],
        }
    }

    /// Builds a parameter vector from a slice of length [`PARAM_DIM`].
    ///
    /// Returns `None` on a length mismatch.
    pub fn from_slice(v: &[f64]) -> Option<Self> {
        let arr: [f64; PARAM_DIM] = v.try_into().ok()?;
        Some(Self::from_array(arr))
    }

    /// Every entry nonnegative and `f_e` within `[0, 1]`.
    pub fn is_admissible(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0) && self.f_e <= 1.0
    }
}

/// Box constraints on the calibrated parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub lower: ParamVector,
    pub upper: ParamVector,
}

impl ParamBounds {
    pub fn new(lower: ParamVector, upper: ParamVector) -> Option<Self> {
        let ok = lower
            .to_array()
            .iter()
            .zip(upper.to_array().iter())
            .all(|(l, u)| l <= u);
        ok.then_some(Self { lower, upper })
    }

    pub fn is_ordered(&self) -> bool {
        self.lower
            .to_array()
            .iter()
            .zip(self.upper.to_array().iter())
            .all(|(l, u)| l <= u)
    }

    pub fn contains(&self, x: &ParamVector) -> bool {
        let (lo, hi, v) = (self.lower.to_array(), self.upper.to_array(), x.to_array());
        (0..PARAM_DIM).all(|j| lo[j] <= v[j] && v[j] <= hi[j])
    }
}

impl Default for ParamBounds {
    /// Broad bounds for COVID-19 calibration.
    fn default() -> Self {
        Self {
            lower: ParamVector {
                beta0: 1.0 / 14.0,
                alpha: 1.0 / 10.0,
                f_e: 0.7,
                gamma: 1.0 / 21.0,
                rho: 1.0 / 2100.0,
                delta: 1.0 / 21000.0,
                kappa_a: 0.0005,
                kappa_h: 0.01,
                eps_h: 0.1,
                beta_inf: 1.0 / 14.0,
                eta: 0.0,
                t_beta: 0.0,
            },
            upper: ParamVector {
                beta0: 1.0 / 2.0,
                alpha: 1.0 / 2.0,
                f_e: 0.9,
                gamma: 1.0 / 7.0,
                rho: 1.0 / 100.0,
                delta: 1.0 / 100.0,
                kappa_a: 0.0050,
                kappa_h: 0.10,
                eps_h: 0.5,
                beta_inf: 1.0 / 2.0,
                eta: 10.0,
                t_beta: 120.0,
            },
        }
    }
}

/// Transmission rate at day `t`: a tanh step from `beta0` to `beta_inf`
/// centred on `t_beta` with sharpness `eta`.
pub fn transmission_rate(t: f64, x: &ParamVector) -> f64 {
    x.beta0 + 0.5 * (x.beta_inf - x.beta0) * (1.0 + (0.5 * x.eta * (t - x.t_beta)).tanh())
}

/// Right-hand side of the SEIR(+AHD) system.
pub fn rhs(t: f64, u: &StateVector, x: &ParamVector) -> Result<StateVector, ModelError> {
    if !(u.n > 0.0) {
        return Err(ModelError::NonpositivePopulation(u.n));
    }
    let beta = transmission_rate(t, x);
    let infection = beta * u.s * (u.i + u.a + x.eps_h * u.h) / u.n;
    let deaths = x.delta * (u.i + x.kappa_a * u.a + x.kappa_h * u.h);
    Ok(StateVector {
        s: -infection,
        e: infection - x.alpha * u.e,
        i: x.f_e * x.alpha * u.e - (x.gamma + x.rho + x.delta) * u.i,
        a: (1.0 - x.f_e) * x.alpha * u.e - (x.kappa_a * x.delta + x.gamma) * u.a,
        h: x.rho * u.i - (x.gamma + x.kappa_h * x.delta) * u.h,
        r: x.gamma * (u.i + u.a + u.h),
        d: deaths,
        n: -deaths,
    })
}

/// Hospital admission flux `rho * I`; integrates to cumulative admissions.
pub fn admission_rate(u: &StateVector, x: &ParamVector) -> f64 {
    x.rho * u.i
}
