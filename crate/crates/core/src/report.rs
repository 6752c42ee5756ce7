//! Posterior summaries and plot-ready tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::abc::{posterior_stats, AbcError, AbcResult, Histogram};
use crate::ce::CeResult;
use crate::sampling::Bounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Bins span the parameter bounds.
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSample {
    /// Draw index within the ABC run.
    pub index: usize,
    pub params: Vec<f64>,
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_evaluated: usize,
    pub n_accepted: usize,
    pub tol: f64,
    pub acceptance_rate: f64,
    pub parameters: Vec<ParameterSummary>,
    pub best: BestSample,
    /// Accepted parameter vectors, one row per draw; any column pair is a
    /// scatter plot.
    #[serde(skip)]
    pub scatter: Vec<Vec<f64>>,
}

/// Summarizes the accepted set. `names` and `bounds` follow the parameter
/// order of the samples.
pub fn summarize(
    result: &AbcResult,
    names: &[&str],
    bounds: &Bounds,
    bins: usize,
) -> Result<PosteriorSummary, AbcError> {
    let stats = posterior_stats(result, bounds, bins)?;
    let dim = stats.mean.len();
    if names.len() != dim || bounds.dim() != dim {
        return Err(AbcError::InvalidConfig(format!(
            "{dim} parameters but {} names and {} bounds",
            names.len(),
            bounds.dim()
        )));
    }
    let column = |j: usize| result.accepted.iter().map(move |s| s.params[j]);
    let parameters = stats
        .histograms
        .into_iter()
        .enumerate()
        .map(|(j, histogram)| ParameterSummary {
            name: names[j].to_string(),
            mean: stats.mean[j],
            std: stats.std[j],
            min: column(j).fold(f64::INFINITY, f64::min),
            max: column(j).fold(f64::NEG_INFINITY, f64::max),
            histogram,
        })
        .collect();
    let best = result.best().expect("accepted set checked nonempty");
    Ok(PosteriorSummary {
        n_evaluated: result.n_evaluated,
        n_accepted: result.accepted.len(),
        tol: result.tol,
        acceptance_rate: result.acceptance_rate(),
        parameters,
        best: BestSample {
            index: best.index,
            params: best.params.clone(),
            j: best.misfit,
        },
        scatter: result.accepted.iter().map(|s| s.params.clone()).collect(),
    })
}

/// Optimum and final sampling spread of a CE run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeSummary {
    pub x_opt: Vec<f64>,
    pub j_opt: f64,
    pub final_mu: Vec<f64>,
    pub final_sigma: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

pub fn summarize_ce(result: &CeResult) -> CeSummary {
    CeSummary {
        x_opt: result.x_opt.clone(),
        j_opt: result.j_opt,
        final_mu: result.final_dist.mu.clone(),
        final_sigma: result.final_dist.sigma.clone(),
        iterations_run: result.iterations_run,
        converged: result.converged,
    }
}

/// `parameter,bin,lower,upper,count`.
pub fn write_histogram_csv<W: Write>(summary: &PosteriorSummary, mut out: W) -> std::io::Result<()> {
    writeln!(out, "parameter,bin,lower,upper,count")?;
    for p in &summary.parameters {
        let h = &p.histogram;
        for (k, c) in h.counts.iter().enumerate() {
            writeln!(out, "{},{k},{},{},{c}", p.name, h.edges[k], h.edges[k + 1])?;
        }
    }
    Ok(())
}

/// Wide table of accepted parameter vectors with parameter-name header.
pub fn write_scatter_csv<W: Write>(summary: &PosteriorSummary, mut out: W) -> std::io::Result<()> {
    let names: Vec<&str> = summary.parameters.iter().map(|p| p.name.as_str()).collect();
    writeln!(out, "{}", names.join(","))?;
    for row in &summary.scatter {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
