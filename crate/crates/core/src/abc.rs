//! Rejection ABC: keep prior draws whose misfit is below a tolerance.
//!
//! The accepted set itself represents the posterior; summaries and
//! credible envelopes are computed directly from it.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{evaluate_batch, ForwardModel};
use crate::integrate::TimeGrid;
use crate::misfit::QoiTarget;
use crate::sampling::{sample_truncated_gaussian, Bounds, DistributionState, RngSeed, SamplingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbcError {
    #[error("invalid ABC configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("no sample out of {evaluated} met the tolerance")]
    NoAcceptedSamples { evaluated: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbcConfig {
    pub n_samples: usize,
    pub tol: f64,
}

impl Default for AbcConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            tol: 0.1,
        }
    }
}

impl AbcConfig {
    pub fn validate(&self) -> Result<(), AbcError> {
        if self.n_samples == 0 {
            return Err(AbcError::InvalidConfig("n_samples must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(AbcError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedSample {
    /// Index of the draw in the prior sample list.
    pub index: usize,
    pub params: Vec<f64>,
    pub series: Vec<Vec<f64>>,
    pub misfit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbcResult {
    /// Accepted draws, in draw order.
    pub accepted: Vec<AcceptedSample>,
    pub n_evaluated: usize,
    pub tol: f64,
}

impl AbcResult {
    pub fn acceptance_rate(&self) -> f64 {
        if self.n_evaluated == 0 {
            0.0
        } else {
            self.accepted.len() as f64 / self.n_evaluated as f64
        }
    }

    /// Accepted draw with the smallest misfit; the earliest one on ties.
    pub fn best(&self) -> Option<&AcceptedSample> {
        self.accepted
            .iter()
            .fold(None, |best: Option<&AcceptedSample>, s| match best {
                Some(b) if b.misfit <= s.misfit => Some(b),
                _ => Some(s),
            })
    }

    fn require_accepted(&self) -> Result<(), AbcError> {
        if self.accepted.is_empty() {
            Err(AbcError::NoAcceptedSamples {
                evaluated: self.n_evaluated,
            })
        } else {
            Ok(())
        }
    }

    /// One row per accepted draw: its draw index, the parameters under
    /// `names`, then `j`.
    pub fn write_samples_csv<W: Write>(&self, mut out: W, names: &[&str]) -> std::io::Result<()> {
        writeln!(out, "index,{},j", names.join(","))?;
        for s in &self.accepted {
            write!(out, "{},", s.index)?;
            for v in &s.params {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", s.misfit)?;
        }
        Ok(())
    }

    /// Rebuilds the parameter/misfit part of a result from
    /// [`write_samples_csv`](Self::write_samples_csv) output. Series are
    /// left empty.
    pub fn read_samples_csv<R: std::io::Read>(
        input: R,
        n_evaluated: usize,
        tol: f64,
    ) -> Result<Self, csv::Error> {
        let bad = |msg: String| csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, msg));
        let mut rdr = csv::Reader::from_reader(input);
        let width = rdr.headers()?.len();
        if width < 2 {
            return Err(bad(format!("expected index, parameters and j columns, got {width}")));
        }
        let mut accepted = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let index: usize = row[0].trim().parse().map_err(|e| bad(format!("index: {e}")))?;
            let vals: Vec<f64> = row
                .iter()
                .skip(1)
                .map(|f| f.trim().parse::<f64>().map_err(|e| bad(format!("'{f}': {e}"))))
                .collect::<Result<_, _>>()?;
            let (params, j) = vals.split_at(vals.len() - 1);
            accepted.push(AcceptedSample {
                index,
                params: params.to_vec(),
                series: Vec::new(),
                misfit: j[0],
            });
        }
        Ok(Self {
            accepted,
            n_evaluated,
            tol,
        })
    }
}

/// Draws `cfg.n_samples` from `prior`, runs each through `forward` and
/// keeps the draws with misfit strictly below `cfg.tol`. Failed forward runs
/// count as rejections.
pub fn abc_infer<M: ForwardModel + ?Sized>(
    prior: &DistributionState,
    forward: &M,
    data: &QoiTarget,
    cfg: &AbcConfig,
    seed: RngSeed,
) -> Result<AbcResult, AbcError> {
    cfg.validate()?;
    let samples = sample_truncated_gaussian(prior, cfg.n_samples, seed)?;
    let evals = evaluate_batch(forward, data, &samples);
    let accepted: Vec<AcceptedSample> = samples
        .into_iter()
        .zip(evals)
        .enumerate()
        .filter_map(|(index, (params, e))| match e {
            Ok(e) if e.misfit < cfg.tol => Some(AcceptedSample {
                index,
                params,
                series: e.series,
                misfit: e.misfit,
            }),
            _ => None,
        })
        .collect();
    let result = AbcResult {
        accepted,
        n_evaluated: cfg.n_samples,
        tol: cfg.tol,
    };
    result.require_accepted()?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; the right edge is closed. Values
    /// outside the range are not counted.
    pub fn new(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0; bins];
        for v in values {
            if !(lo..=hi).contains(&v) {
                continue;
            }
            let k = if width > 0.0 {
                (((v - lo) / width).floor() as usize).min(bins - 1)
            } else {
                0
            };
            counts[k] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPair {
    pub first: usize,
    pub second: usize,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats {
    pub mean: Vec<f64>,
    /// Population standard deviation over the accepted draws.
    pub std: Vec<f64>,
    pub histograms: Vec<Histogram>,
    /// Every unordered parameter pair `(i, j)`, `i < j`.
    pub scatter: Vec<ScatterPair>,
}

pub const DEFAULT_BINS: usize = 20;

/// Per-parameter moments and bound-aligned histograms of the accepted set.
pub fn posterior_stats(
    result: &AbcResult,
    bounds: &Bounds,
    bins: usize,
) -> Result<PosteriorStats, AbcError> {
    result.require_accepted()?;
    let dim = result.accepted[0].params.len();
    let m = result.accepted.len() as f64;
    let column = |j: usize| result.accepted.iter().map(move |s| s.params[j]);

    let mean: Vec<f64> = (0..dim).map(|j| column(j).sum::<f64>() / m).collect();
    let std = (0..dim)
        .map(|j| (column(j).map(|v| (v - mean[j]).powi(2)).sum::<f64>() / m).sqrt())
        .collect();
    let histograms = (0..dim)
        .map(|j| Histogram::new(column(j), bounds.lower[j], bounds.upper[j], bins))
        .collect();
    let mut scatter = Vec::with_capacity(dim * dim.saturating_sub(1) / 2);
    for i in 0..dim {
        for j in i + 1..dim {
            scatter.push(ScatterPair {
                first: i,
                second: j,
                points: result.accepted.iter().map(|s| (s.params[i], s.params[j])).collect(),
            });
        }
    }
    Ok(PosteriorStats {
        mean,
        std,
        histograms,
        scatter,
    })
}

/// Linear interpolation between order statistics of a sorted slice, with
/// position `p * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockEnvelope {
    pub label: String,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub times: Vec<f64>,
    pub level: f64,
    pub blocks: Vec<BlockEnvelope>,
}

impl BlockEnvelope {
    /// Writes `t,lower,median,upper`.
    pub fn write_csv<W: Write>(&self, times: &[f64], mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,lower,median,upper")?;
        for (k, t) in times.iter().enumerate() {
            writeln!(out, "{t},{},{},{}", self.lower[k], self.median[k], self.upper[k])?;
        }
        Ok(())
    }
}

/// Pointwise median and central `level` band of the accepted series.
///
/// `labels` names the blocks; missing labels default to the block index.
pub fn credible_envelope(
    result: &AbcResult,
    level: f64,
    grid: &TimeGrid,
    labels: &[&str],
) -> Result<Envelope, AbcError> {
    result.require_accepted()?;
    if !(level > 0.0 && level < 1.0) {
        return Err(AbcError::InvalidConfig(format!("level {level} not in (0, 1)")));
    }
    envelope_from_series(result.accepted.iter().map(|s| s.series.as_slice()), level, grid, labels)
        .ok_or(AbcError::InvalidConfig("accepted series have inconsistent shapes".into()))
}

/// Envelope of arbitrary series sets, each shaped `[block][time]`.
pub fn envelope_from_series<'a>(
    series: impl Iterator<Item = &'a [Vec<f64>]>,
    level: f64,
    grid: &TimeGrid,
    labels: &[&str],
) -> Option<Envelope> {
    let series: Vec<&[Vec<f64>]> = series.collect();
    let first = series.first()?;
    let n_blocks = first.len();
    let mut times = grid.times();
    let n_times = first.first().map_or(0, Vec::len);
    times.truncate(n_times);
    if times.len() != n_times {
        return None;
    }
    let (p_lo, p_hi) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);

    let mut blocks = Vec::with_capacity(n_blocks);
    let mut column = Vec::with_capacity(series.len());
    for b in 0..n_blocks {
        let mut env = BlockEnvelope {
            label: labels.get(b).map_or_else(|| b.to_string(), |s| s.to_string()),
            lower: Vec::with_capacity(n_times),
            median: Vec::with_capacity(n_times),
            upper: Vec::with_capacity(n_times),
        };
        for t in 0..n_times {
            column.clear();
            for s in &series {
                column.push(*s.get(b)?.get(t)?);
            }
            column.sort_by(f64::total_cmp);
            env.lower.push(quantile_sorted(&column, p_lo));
            env.median.push(quantile_sorted(&column, 0.5));
            env.upper.push(quantile_sorted(&column, p_hi));
        }
        blocks.push(env);
    }
    Some(Envelope {
        times,
        level,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ForwardError;
    use crate::misfit::QoiBlock;

    fn target(values: Vec<f64>) -> QoiTarget {
        QoiTarget::new(
            vec![QoiBlock {
                label: "y".into(),
                values,
            }],
            vec![1.0],
        )
        .unwrap()
    }

    fn unit_prior(dim: usize) -> DistributionState {
        DistributionState::flat(Bounds::new(vec![0.0; dim], vec![1.0; dim]).unwrap())
    }

    fn sample_with(index: usize, params: Vec<f64>, series: Vec<Vec<f64>>) -> AcceptedSample {
        AcceptedSample {
            index,
            params,
            series,
            misfit: 0.0,
        }
    }

    #[test]
    fn huge_tolerance_accepts_everything() {
        let fwd = |x: &[f64]| -> Result<Vec<Vec<f64>>, ForwardError> { Ok(vec![vec![x[0]]]) };
        let cfg = AbcConfig {
            n_samples: 300,
            tol: 1e9,
        };
        let res = abc_infer(&unit_prior(2), &fwd, &target(vec![0.5]), &cfg, RngSeed(4)).unwrap();
        assert_eq!(res.acceptance_rate(), 1.0);
        assert_eq!(res.accepted.len(), 300);
    }

    #[test]
    fn exact_forward_is_all_zero() {
        let fwd = |_: &[f64]| -> Result<Vec<Vec<f64>>, ForwardError> { Ok(vec![vec![2.0, 3.0]]) };
        let cfg = AbcConfig {
            n_samples: 50,
            tol: 0.1,
        };
        let res = abc_infer(&unit_prior(1), &fwd, &target(vec![2.0, 3.0]), &cfg, RngSeed(0)).unwrap();
        assert!(res.accepted.iter().all(|s| s.misfit == 0.0));
        assert_eq!(res.best().unwrap().misfit, 0.0);
        assert_eq!(res.best().unwrap().index, 0);
    }

    #[test]
    fn accepted_set_equals_external_filter() {
        let fwd = |x: &[f64]| -> Result<Vec<Vec<f64>>, ForwardError> { Ok(vec![vec![x[0] + x[1]]]) };
        let data = target(vec![1.0]);
        let prior = unit_prior(2);
        let cfg = AbcConfig {
            n_samples: 1000,
            tol: 0.05,
        };
        let res = abc_infer(&prior, &fwd, &data, &cfg, RngSeed(31)).unwrap();

        let draws = sample_truncated_gaussian(&prior, 1000, RngSeed(31)).unwrap();
        let want: Vec<usize> = draws
            .iter()
            .enumerate()
            .filter(|(_, x)| (1.0 - (x[0] + x[1])).powi(2) < 0.05)
            .map(|(k, _)| k)
            .collect();
        let got: Vec<usize> = res.accepted.iter().map(|s| s.index).collect();
        assert_eq!(got, want);
        for s in &res.accepted {
            assert_eq!(s.params, draws[s.index]);
            assert!(s.misfit < cfg.tol);
        }
    }

    #[test]
    fn boundary_misfit_is_rejected() {
        let fwd = |_: &[f64]| -> Result<Vec<Vec<f64>>, ForwardError> { Ok(vec![vec![0.0]]) };
        // misfit is exactly 1
        let cfg = AbcConfig {
            n_samples: 5,
            tol: 1.0,
        };
        let err = abc_infer(&unit_prior(1), &fwd, &target(vec![1.0]), &cfg, RngSeed(0)).unwrap_err();
        assert_eq!(err, AbcError::NoAcceptedSamples { evaluated: 5 });
    }

    #[test]
    fn failures_count_as_rejections() {
        let fwd = |x: &[f64]| -> Result<Vec<Vec<f64>>, ForwardError> {
            if x[0] < 0.5 {
                Err(ForwardError::Dimension { expected: 0, actual: 0 })
            } else {
                Ok(vec![vec![1.0]])
            }
        };
        let cfg = AbcConfig {
            n_samples: 400,
            tol: 0.1,
        };
        let res = abc_infer(&unit_prior(1), &fwd, &target(vec![1.0]), &cfg, RngSeed(2)).unwrap();
        assert!(res.accepted.iter().all(|s| s.params[0] >= 0.5));
        assert!(res.acceptance_rate() > 0.3 && res.acceptance_rate() < 0.7);
        assert_eq!(res.n_evaluated, 400);
    }

    #[test]
    fn stats_single_and_pair() {
        let bounds = Bounds::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let one = AbcResult {
            accepted: vec![sample_with(0, vec![1.0, 2.0], vec![])],
            n_evaluated: 1,
            tol: 0.1,
        };
        let s = posterior_stats(&one, &bounds, 5).unwrap();
        assert_eq!(s.mean, vec![1.0, 2.0]);
        assert_eq!(s.std, vec![0.0, 0.0]);

        let two = AbcResult {
            accepted: vec![
                sample_with(0, vec![1.0, 2.0], vec![]),
                sample_with(1, vec![3.0, 10.0], vec![]),
            ],
            n_evaluated: 4,
            tol: 0.1,
        };
        let s = posterior_stats(&two, &bounds, 5).unwrap();
        assert_eq!(s.mean, vec![2.0, 6.0]);
        assert_eq!(s.std, vec![1.0, 4.0]);
        assert_eq!(s.histograms[1].counts, vec![0, 1, 0, 0, 1]);
        assert_eq!(s.scatter.len(), 1);
        assert_eq!(s.scatter[0].points, vec![(1.0, 2.0), (3.0, 10.0)]);
        assert_eq!(two.acceptance_rate(), 0.5);
    }

    #[test]
    fn empty_set_is_an_error() {
        let empty = AbcResult {
            accepted: vec![],
            n_evaluated: 10,
            tol: 0.1,
        };
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(
            posterior_stats(&empty, &bounds, 20),
            Err(AbcError::NoAcceptedSamples { evaluated: 10 })
        ));
        assert!(matches!(
            credible_envelope(&empty, 0.95, &TimeGrid::daily(3, 1), &[]),
            Err(AbcError::NoAcceptedSamples { .. })
        ));
    }

    #[test]
    fn envelope_of_one_trajectory() {
        let res = AbcResult {
            accepted: vec![sample_with(0, vec![0.0], vec![vec![1.0, 4.0, 2.0]])],
            n_evaluated: 1,
            tol: 1.0,
        };
        let env = credible_envelope(&res, 0.95, &TimeGrid::daily(3, 1), &["H"]).unwrap();
        let b = &env.blocks[0];
        assert_eq!(b.lower, vec![1.0, 4.0, 2.0]);
        assert_eq!(b.median, b.lower);
        assert_eq!(b.upper, b.lower);
        assert_eq!(env.times, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn envelope_of_three_constants() {
        let res = AbcResult {
            accepted: (1..=3)
                .map(|c| sample_with(c, vec![0.0], vec![vec![c as f64; 4]]))
                .collect(),
            n_evaluated: 3,
            tol: 1.0,
        };
        let env = credible_envelope(&res, 0.95, &TimeGrid::daily(4, 1), &["H"]).unwrap();
        let b = &env.blocks[0];
        assert!(b.median.iter().all(|m| *m == 2.0));
        assert!(b.lower.iter().all(|v| (1.0..2.0).contains(v)));
        assert!(b.upper.iter().all(|v| *v > 2.0 && *v <= 3.0));
    }

    // Percentile by explicit rank arithmetic, independent of quantile_sorted.
    fn percentile_oracle(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = 1.0 + p * (v.len() as f64 - 1.0);
        let k = rank.floor() as usize;
        let frac = rank - k as f64;
        if k >= v.len() {
            return v[v.len() - 1];
        }
        v[k - 1] + frac * (v[k] - v[k - 1])
    }

    #[test]
    fn envelope_matches_percentile_oracle() {
        let res = AbcResult {
            accepted: (1..=100)
                .rev()
                .map(|c| sample_with(c, vec![0.0], vec![vec![c as f64; 2]]))
                .collect(),
            n_evaluated: 100,
            tol: 1.0,
        };
        let env = credible_envelope(&res, 0.95, &TimeGrid::daily(2, 1), &["H"]).unwrap();
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let b = &env.blocks[0];
        approx::assert_abs_diff_eq!(b.lower[0], percentile_oracle(&values, 0.025), epsilon = 1e-12);
        approx::assert_abs_diff_eq!(b.median[0], percentile_oracle(&values, 0.5), epsilon = 1e-12);
        approx::assert_abs_diff_eq!(b.upper[0], percentile_oracle(&values, 0.975), epsilon = 1e-12);
        // numpy.quantile (linear) on 1..=100
        approx::assert_abs_diff_eq!(b.lower[0], 3.475, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(b.median[0], 50.5, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(b.upper[0], 97.525, epsilon = 1e-12);
    }

    #[test]
    fn samples_csv_round_trip() {
        let res = AbcResult {
            accepted: vec![
                AcceptedSample {
                    index: 0,
                    params: vec![0.1, 1.0 / 3.0],
                    series: vec![],
                    misfit: 0.0123,
                },
                AcceptedSample {
                    index: 6,
                    params: vec![2.5e-7, 7.0],
                    series: vec![],
                    misfit: 0.09,
                },
            ],
            n_evaluated: 9,
            tol: 0.1,
        };
        let mut buf = Vec::new();
        res.write_samples_csv(&mut buf, &["a", "b"]).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("index,a,b,j\n0,0.1,"));
        let back = AbcResult::read_samples_csv(buf.as_slice(), 9, 0.1).unwrap();
        assert_eq!(back, res);
    }

    proptest::proptest! {
        #[test]
        fn envelope_is_ordered(
            raw in proptest::collection::vec(proptest::collection::vec(-100.0..100.0f64, 6), 1..40),
            level in 0.05..0.99f64,
        ) {
            let res = AbcResult {
                accepted: raw.iter().enumerate().map(|(k, s)| sample_with(k, vec![0.0], vec![s.clone()])).collect(),
                n_evaluated: raw.len(),
                tol: 1.0,
            };
            let env = credible_envelope(&res, level, &TimeGrid::daily(6, 1), &["x"]).unwrap();
            let b = &env.blocks[0];
            for t in 0..6 {
                proptest::prop_assert!(b.lower[t] <= b.median[t] && b.median[t] <= b.upper[t]);
            }
        }
    }
}
