//! Parameter-to-observable maps and batched evaluation.

use rayon::prelude::*;
use thiserror::Error;

use crate::integrate::{self, IntegrateError, TimeGrid};
use crate::misfit::{self, MisfitError, QoiTarget};
use crate::model::{ParamVector, StateVector, PARAM_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Misfit(#[from] MisfitError),
    #[error("expected {expected} parameters, got {actual}")]
    Dimension { expected: usize, actual: usize },
}

/// Maps a parameter vector to blocks of observable series.
pub trait ForwardModel: Sync {
    fn evaluate(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ForwardError>;
}

impl<F> ForwardModel for F
where
    F: Fn(&[f64]) -> Result<Vec<Vec<f64>>, ForwardError> + Sync,
{
    fn evaluate(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ForwardError> {
        self(x)
    }
}

/// SEIR(+AHD) run from a fixed initial state, observed daily as `[H, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicForward {
    pub initial_state: StateVector,
    pub grid: TimeGrid,
}

impl EpidemicForward {
    /// Observes days `0..days` from `initial_state`.
    pub fn daily(initial_state: StateVector, days: usize, substeps: usize) -> Self {
        Self {
            initial_state,
            grid: TimeGrid::daily(days, substeps),
        }
    }

    pub fn simulate(&self, x: &ParamVector) -> Result<integrate::Trajectory, IntegrateError> {
        integrate::integrate(&self.initial_state, x, &self.grid)
    }
}

impl ForwardModel for EpidemicForward {
    fn evaluate(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ForwardError> {
        let params = ParamVector::from_slice(x).ok_or(ForwardError::Dimension {
            expected: PARAM_DIM,
            actual: x.len(),
        })?;
        let traj = self.simulate(&params)?;
        Ok(integrate::extract_qoi(&traj).into_blocks())
    }
}

/// Output and misfit of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub series: Vec<Vec<f64>>,
    pub misfit: f64,
}

/// Evaluates every sample on the ambient rayon pool. Results come back in
/// sample order regardless of scheduling.
pub fn evaluate_batch<M: ForwardModel + ?Sized>(
    forward: &M,
    target: &QoiTarget,
    samples: &[Vec<f64>],
) -> Vec<Result<Evaluation, ForwardError>> {
    samples
        .par_iter()
        .map(|x| {
            let series = forward.evaluate(x)?;
            let j = misfit::misfit(&series, target)?;
            Ok(Evaluation { series, misfit: j })
        })
        .collect()
}
