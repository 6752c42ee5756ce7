//! End-to-end steps shared by the command-line tool and the test suites.

use rayon::prelude::*;
use thiserror::Error;

use crate::abc::{self, AbcError, AbcResult, Envelope};
use crate::ce::{self, CeError, CeResult};
use crate::config::{ConfigError, RunConfig};
use crate::data::{self, DataError, SurveillanceDataset};
use crate::forward::{EpidemicForward, ForwardModel};
use crate::ic::{self, IcError, InferredState};
use crate::integrate::Trajectory;
use crate::model::StateVector;
use crate::sampling::RngSeed;

pub const QOI_LABELS: [&str; 2] = ["H", "D"];

const CE_STREAM: u64 = 0xce;
const ABC_STREAM: u64 = 0xabc;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ic(#[from] IcError),
    #[error(transparent)]
    Ce(#[from] CeError),
    #[error(transparent)]
    Abc(AbcError),
    #[error("no sample out of {evaluated} met the tolerance")]
    NoAcceptedSamples { evaluated: usize, ce: Box<CeResult> },
}

pub fn virgin_trajectory(cfg: &RunConfig) -> Result<Trajectory, IcError> {
    ic::virgin_run(&cfg.virgin, &cfg.virgin.grid(cfg.grid.substeps))
}

/// Initial state for the calibration window. References missing from the
/// configuration are read from the first row of `window`.
pub fn infer_initial_condition(
    cfg: &RunConfig,
    virgin: &Trajectory,
    window: Option<&SurveillanceDataset>,
) -> Result<InferredState, PipelineError> {
    let (h0, d0) = match window {
        Some(w) => (w.hospitalized()[0], w.total_deaths()[0]),
        None if cfg.ic.h_ref.is_some() && cfg.ic.d_ref.is_some() => (f64::NAN, f64::NAN),
        None => {
            return Err(ConfigError::Invalid(
                "ic.h_ref and ic.d_ref are required when no data are given".into(),
            )
            .into())
        }
    };
    let refs = cfg.ic.references(h0, d0)?;
    Ok(ic::infer_initial_state(virgin, &refs, &cfg.ic.weights())?)
}

/// Rows between `data.start` and `data.end`, each defaulting to the
/// corresponding end of the file.
pub fn calibration_window(cfg: &RunConfig, ds: &SurveillanceDataset) -> Result<SurveillanceDataset, DataError> {
    let start = cfg.data.start.unwrap_or(ds.first_date());
    let end = cfg.data.end.unwrap_or(ds.last_date());
    ds.window(start, end)
}

pub fn load_window(cfg: &RunConfig) -> Result<SurveillanceDataset, PipelineError> {
    let path = cfg
        .paths
        .data
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("no data file given (paths.data or --data)".into()))?;
    let ds = data::load_surveillance_csv(path, cfg.data.reconcile_tol)?;
    Ok(calibration_window(cfg, &ds)?)
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub forward: EpidemicForward,
    pub ce: CeResult,
    pub abc: AbcResult,
    pub envelope: Envelope,
}

/// CE optimization followed by ABC from the final CE distribution. Time
/// zero is the first day of `window`.
pub fn calibrate(
    cfg: &RunConfig,
    window: &SurveillanceDataset,
    initial: StateVector,
    seed: RngSeed,
) -> Result<Calibration, PipelineError> {
    let target = window.to_target(cfg.omega)?;
    let forward = EpidemicForward::daily(initial, window.len(), cfg.grid.substeps);
    let ce = ce::ce_optimize(&forward, &target, &cfg.sampling_bounds(), &cfg.ce, seed.derive(CE_STREAM))?;
    let abc = match abc::abc_infer(&ce.final_dist, &forward, &target, &cfg.abc, seed.derive(ABC_STREAM)) {
        Ok(r) => r,
        Err(AbcError::NoAcceptedSamples { evaluated }) => {
            return Err(PipelineError::NoAcceptedSamples {
                evaluated,
                ce: Box::new(ce),
            })
        }
        Err(e) => return Err(PipelineError::Abc(e)),
    };
    let envelope = abc::credible_envelope(&abc, cfg.report.level, &forward.grid, &QOI_LABELS)
        .map_err(PipelineError::Abc)?;
    Ok(Calibration {
        forward,
        ce,
        abc,
        envelope,
    })
}

/// Re-simulates every parameter vector over `days + horizon` days and
/// returns the envelope of the successful runs with their count.
pub fn forecast(
    initial: StateVector,
    params: &[Vec<f64>],
    days: usize,
    horizon: usize,
    substeps: usize,
    level: f64,
) -> Result<(Envelope, usize), AbcError> {
    let forward = EpidemicForward::daily(initial, days + horizon, substeps);
    let runs: Vec<Option<Vec<Vec<f64>>>> = params.par_iter().map(|x| forward.evaluate(x).ok()).collect();
    let ok: Vec<&Vec<Vec<f64>>> = runs.iter().flatten().collect();
    let env = abc::envelope_from_series(ok.iter().map(|s| s.as_slice()), level, &forward.grid, &QOI_LABELS)
        .ok_or(AbcError::NoAcceptedSamples { evaluated: params.len() })?;
    Ok((env, ok.len()))
}

/// Dataset generated from the nominal parameters, started at the state
/// inferred from the configured references.
pub fn synthetic_dataset(cfg: &RunConfig) -> Result<(InferredState, SurveillanceDataset), PipelineError> {
    let virgin = virgin_trajectory(cfg)?;
    let initial = infer_initial_condition(cfg, &virgin, None)?;
    let ds = data::generate_synthetic(&cfg.synthetic, &initial.blended, cfg.grid.substeps)?;
    Ok((initial, ds))
}
