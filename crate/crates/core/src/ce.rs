//! Cross-entropy minimisation over a bounded box.
//!
//! Each iteration draws a population from a diagonal truncated Gaussian,
//! keeps the lowest-misfit fraction as the elite set, refits mean and
//! standard deviation to the elite, and damps the refit with the
//! `(a, b, q)` smoothing scheme. Iteration stops when successive standard
//! deviation vectors agree in the weighted RMS norm, or at `max_iter`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{evaluate_batch, ForwardModel};
use crate::misfit::QoiTarget;
use crate::sampling::{
    sample_truncated_gaussian, weighted_rms_norm, Bounds, DistributionState, RngSeed,
    SamplingError, ToleranceConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CeError {
    #[error("invalid CE configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("every forward evaluation failed in iteration {iteration}")]
    AllSamplesFailed { iteration: usize },
    #[error("elite set must hold at least one sample")]
    EmptyElite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeConfig {
    pub n_samples: usize,
    pub elite_fraction: f64,
    pub smoothing_a: f64,
    pub smoothing_b: f64,
    pub smoothing_q: f64,
    pub max_iter: usize,
    pub atol: f64,
    pub rtol: f64,
}

impl Default for CeConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            elite_fraction: 0.10,
            smoothing_a: 0.7,
            smoothing_b: 0.8,
            smoothing_q: 5.0,
            max_iter: 150,
            atol: 0.001,
            rtol: 0.05,
        }
    }
}

impl CeConfig {
    pub fn n_elite(&self) -> usize {
        ((self.elite_fraction * self.n_samples as f64).round() as usize).max(1)
    }

    pub fn tolerance(&self, dim: usize) -> ToleranceConfig {
        ToleranceConfig::uniform(self.atol, self.rtol, dim)
    }

    pub fn validate(&self) -> Result<(), CeError> {
        let bad = |m: String| Err(CeError::InvalidConfig(m));
        if !(self.smoothing_a > 0.0 && self.smoothing_a <= 1.0) {
            return bad(format!("smoothing_a = {} not in (0, 1]", self.smoothing_a));
        }
        if !(0.8..=0.99).contains(&self.smoothing_b) {
            return bad(format!("smoothing_b = {} not in [0.8, 0.99]", self.smoothing_b));
        }
        if !(5.0..=10.0).contains(&self.smoothing_q) {
            return bad(format!("smoothing_q = {} not in [5, 10]", self.smoothing_q));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return bad(format!("elite_fraction = {} not in (0, 1)", self.elite_fraction));
        }
        if self.n_elite() >= self.n_samples {
            return bad(format!(
                "elite size {} must be smaller than n_samples {}",
                self.n_elite(),
                self.n_samples
            ));
        }
        if !(self.rtol > 0.0) || !(self.atol >= 0.0) {
            return bad(format!("need atol >= 0 and rtol > 0, got {} and {}", self.atol, self.rtol));
        }
        Ok(())
    }

    /// Variance smoothing weight at iteration `iter` (1-based).
    pub fn sigma_weight(&self, iter: usize) -> f64 {
        let b = self.smoothing_b;
        b - b * (1.0 - 1.0 / iter as f64).powf(self.smoothing_q)
    }
}

/// State of the sampling law after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeIteration {
    pub iter: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma_hat: f64,
    pub best_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeResult {
    pub x_opt: Vec<f64>,
    pub j_opt: f64,
    pub y_opt: Vec<Vec<f64>>,
    pub final_dist: DistributionState,
    pub history: Vec<CeIteration>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl CeResult {
    /// Writes `iter,mu_1..mu_d,sigma_1..sigma_d,gamma_hat,best_j`.
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.x_opt.len();
        let mut header = vec!["iter".to_string()];
        header.extend((1..=d).map(|j| format!("mu_{j}")));
        header.extend((1..=d).map(|j| format!("sigma_{j}")));
        header.push("gamma_hat".into());
        header.push("best_j".into());
        writeln!(out, "{}", header.join(","))?;
        for rec in &self.history {
            write!(out, "{}", rec.iter)?;
            for v in rec.mu.iter().chain(&rec.sigma) {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{},{}", rec.gamma_hat, rec.best_j)?;
        }
        Ok(())
    }
}

/// Indices of the `n_elite` smallest misfits and the largest misfit among
/// them.
///
/// Non-finite values rank as `+inf` and are never part of the elite, so the
/// returned set can be shorter than `n_elite` when most evaluations failed.
/// Ties go to the lower index.
pub fn select_elite(j_values: &[f64], n_elite: usize) -> Result<(Vec<usize>, f64), CeError> {
    if n_elite == 0 {
        return Err(CeError::EmptyElite);
    }
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    let mut order: Vec<usize> = (0..j_values.len()).collect();
    order.sort_by(|&p, &q| key(j_values[p]).total_cmp(&key(j_values[q])).then(p.cmp(&q)));
    let elite: Vec<usize> = order
        .into_iter()
        .take(n_elite)
        .filter(|&k| j_values[k].is_finite())
        .collect();
    if elite.is_empty() {
        return Err(CeError::EmptyElite);
    }
    let gamma_hat = elite.iter().map(|&k| j_values[k]).fold(f64::NEG_INFINITY, f64::max);
    Ok((elite, gamma_hat))
}

/// Refits the sampling law to the elite set and applies smoothing.
///
/// The raw refit uses the elite mean and the population (divide-by-count)
/// standard deviation. The smoothed mean is clamped into the box and the
/// standard deviation floored at `1e-12` times the box width.
pub fn update_distribution(
    elite: &[&[f64]],
    prev: &DistributionState,
    iter: usize,
    cfg: &CeConfig,
) -> DistributionState {
    assert!(!elite.is_empty(), "elite set is empty");
    assert!(iter >= 1, "iterations are 1-based");
    let dim = prev.dim();
    let m = elite.len() as f64;
    let a = cfg.smoothing_a;
    let b_l = cfg.sigma_weight(iter);

    let mut mu = Vec::with_capacity(dim);
    let mut sigma = Vec::with_capacity(dim);
    for j in 0..dim {
        let mean = elite.iter().map(|x| x[j]).sum::<f64>() / m;
        let var = elite.iter().map(|x| (x[j] - mean) * (x[j] - mean)).sum::<f64>() / m;
        let sd = var.sqrt();

        let (lo, hi) = (prev.bounds.lower[j], prev.bounds.upper[j]);
        let mu_j = (a * mean + (1.0 - a) * prev.mu[j]).clamp(lo, hi);
        let floor = (1e-12 * (hi - lo)).max(f64::MIN_POSITIVE);
        let sigma_j = (b_l * sd + (1.0 - b_l) * prev.sigma[j]).max(floor);
        mu.push(mu_j);
        sigma.push(sigma_j);
    }
    DistributionState {
        mu,
        sigma,
        bounds: prev.bounds.clone(),
    }
}

/// Minimises the misfit of `forward` against `data` over `bounds`.
///
/// Iteration `l` draws from stream `seed.derive(l)`. Samples whose forward
/// run fails get an infinite misfit. At least two iterations always run,
/// since the stopping test compares consecutive standard deviations.
pub fn ce_optimize<M: ForwardModel + ?Sized>(
    forward: &M,
    data: &QoiTarget,
    bounds: &Bounds,
    cfg: &CeConfig,
    seed: RngSeed,
) -> Result<CeResult, CeError> {
    cfg.validate()?;
    let dim = bounds.dim();
    let tol = cfg.tolerance(dim);
    let n_elite = cfg.n_elite();

    let mut dist = DistributionState::flat(bounds.clone());
    dist.validate()?;

    let mut best: Option<(Vec<f64>, f64, Vec<Vec<f64>>)> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iter = 0;

    while iter < cfg.max_iter {
        iter += 1;
        let samples = sample_truncated_gaussian(&dist, cfg.n_samples, seed.derive(iter as u64))?;
        let evals = evaluate_batch(forward, data, &samples);

        let mut j_values = Vec::with_capacity(evals.len());
        for (k, e) in evals.into_iter().enumerate() {
            match e {
                Ok(e) => {
                    if e.misfit.is_finite()
                        && best.as_ref().map_or(true, |(_, bj, _)| e.misfit < *bj)
                    {
                        best = Some((samples[k].clone(), e.misfit, e.series));
                    }
                    j_values.push(e.misfit);
                }
                Err(_) => j_values.push(f64::INFINITY),
            }
        }
        let (elite_idx, gamma_hat) = match select_elite(&j_values, n_elite) {
            Ok(v) => v,
            Err(CeError::EmptyElite) => return Err(CeError::AllSamplesFailed { iteration: iter }),
            Err(e) => return Err(e),
        };
        let elite: Vec<&[f64]> = elite_idx.iter().map(|&k| samples[k].as_slice()).collect();
        let next = update_distribution(&elite, &dist, iter, cfg);

        let best_j = best.as_ref().map_or(f64::INFINITY, |b| b.1);
        history.push(CeIteration {
            iter,
            mu: next.mu.clone(),
            sigma: next.sigma.clone(),
            gamma_hat,
            best_j,
        });

        let settled = iter >= 2 && weighted_rms_norm(&next.sigma, &dist.sigma, &tol)? <= 1.0;
        dist = next;
        if settled {
            converged = true;
            break;
        }
    }

    let (x_opt, j_opt, y_opt) = best.expect("at least one finite evaluation");
    Ok(CeResult {
        x_opt,
        j_opt,
        y_opt,
        final_dist: dist,
        history,
        iterations_run: iter,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ForwardError;
    use crate::misfit::QoiBlock;

    fn bowl_target(center: &[f64]) -> QoiTarget {
        QoiTarget::new(
            vec![QoiBlock {
                label: "x".into(),
                values: center.to_vec(),
            }],
            vec![1.0],
        )
        .unwrap()
    }

    fn identity(x: &[f64]) -> Result<Vec<Vec<f64>>, ForwardError> {
        Ok(vec![x.to_vec()])
    }

    #[test]
    fn elite_by_sorting() {
        let (idx, g) = select_elite(&[5.0, 3.0, 1.0, 4.0, 2.0], 2).unwrap();
        assert_eq!(idx, vec![2, 4]);
        assert_eq!(g, 2.0);
    }

    #[test]
    fn elite_ties_go_to_lower_index() {
        let (idx, g) = select_elite(&[7.0; 6], 3).unwrap();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(g, 7.0);
    }

    #[test]
    fn failed_samples_never_elite() {
        let j = [f64::INFINITY, f64::NAN, 3.0, f64::INFINITY];
        let (idx, g) = select_elite(&j, 2).unwrap();
        assert_eq!(idx, vec![2]);
        assert_eq!(g, 3.0);
        assert_eq!(select_elite(&[f64::NAN], 1), Err(CeError::EmptyElite));
        assert_eq!(select_elite(&[1.0], 0), Err(CeError::EmptyElite));
    }

    #[test]
    fn elite_matches_full_sort_oracle() {
        use rand::Rng;
        let mut rng = RngSeed(5).stream(0);
        for _ in 0..50 {
            let j: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
            let mut sorted: Vec<(f64, usize)> = j.iter().copied().zip(0..).collect();
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = sorted[..10].iter().map(|p| p.1).collect();
            let (got, g) = select_elite(&j, 10).unwrap();
            assert_eq!(got, want);
            assert_eq!(g, sorted[9].0);
        }
    }

    #[test]
    fn sigma_weight_schedule() {
        let cfg = CeConfig::default();
        assert_eq!(cfg.sigma_weight(1), 0.8);
        approx::assert_abs_diff_eq!(cfg.sigma_weight(10), 0.327608, epsilon = 1e-12);
    }

    #[test]
    fn first_update_without_mean_smoothing() {
        let bounds = Bounds::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let prev = DistributionState::new(vec![5.0, 5.0], vec![3.0, 2.0], bounds).unwrap();
        let cfg = CeConfig {
            smoothing_a: 1.0,
            ..CeConfig::default()
        };
        let e: [&[f64]; 3] = [&[1.0, 2.0], &[2.0, 4.0], &[3.0, 9.0]];
        let next = update_distribution(&e, &prev, 1, &cfg);
        assert_eq!(next.mu, vec![2.0, 5.0]);
        let sd0 = (2.0f64 / 3.0).sqrt();
        let sd1 = (26.0f64 / 3.0).sqrt();
        approx::assert_abs_diff_eq!(next.sigma[0], 0.8 * sd0 + 0.2 * 3.0, epsilon = 1e-14);
        approx::assert_abs_diff_eq!(next.sigma[1], 0.8 * sd1 + 0.2 * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn identical_elite_shrinks_sigma() {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let prev = DistributionState::new(vec![0.5], vec![0.2], bounds).unwrap();
        let cfg = CeConfig::default();
        let e: [&[f64]; 4] = [&[0.3]; 4];
        let next = update_distribution(&e, &prev, 3, &cfg);
        let b3 = cfg.sigma_weight(3);
        approx::assert_abs_diff_eq!(next.sigma[0], (1.0 - b3) * 0.2, epsilon = 1e-15);
        approx::assert_abs_diff_eq!(next.mu[0], 0.7 * 0.3 + 0.3 * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn sigma_floor_and_mean_clamp() {
        let bounds = Bounds::new(vec![0.0], vec![2.0]).unwrap();
        let prev = DistributionState::new(vec![2.0], vec![1e-300], bounds).unwrap();
        let cfg = CeConfig::default();
        let e: [&[f64]; 2] = [&[2.0], &[2.0]];
        let next = update_distribution(&e, &prev, 50, &cfg);
        assert_eq!(next.sigma[0], 2e-12);
        assert_eq!(next.mu[0], 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(CeConfig::default().validate().is_ok());
        let bad = [
            CeConfig { smoothing_a: 0.0, ..CeConfig::default() },
            CeConfig { smoothing_b: 0.5, ..CeConfig::default() },
            CeConfig { smoothing_q: 11.0, ..CeConfig::default() },
            CeConfig { n_samples: 1, ..CeConfig::default() },
            CeConfig { max_iter: 0, ..CeConfig::default() },
            CeConfig { rtol: 0.0, ..CeConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert_eq!(CeConfig::default().n_elite(), 10);
    }

    #[test]
    fn zero_misfit_everywhere() {
        let bounds = Bounds::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let zero = |_: &[f64]| -> Result<Vec<Vec<f64>>, ForwardError> { Ok(vec![vec![1.0]]) };
        let target = bowl_target(&[1.0]);
        let res = ce_optimize(&zero, &target, &bounds, &CeConfig::default(), RngSeed(1)).unwrap();
        assert_eq!(res.j_opt, 0.0);
        assert!(res.converged);
        assert!(res.iterations_run >= 2);
    }

    #[test]
    fn quadratic_bowl() {
        let bounds = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let center = [0.3, 0.65];
        let target = bowl_target(&center);
        let res = ce_optimize(&identity, &target, &bounds, &CeConfig::default(), RngSeed(8)).unwrap();
        let dist = ((res.x_opt[0] - center[0]).powi(2) + (res.x_opt[1] - center[1]).powi(2)).sqrt();
        assert!(dist < 1e-2, "x_opt = {:?}", res.x_opt);
        assert!(bounds.contains(&res.x_opt));
        for w in res.history.windows(2) {
            assert!(w[1].best_j <= w[0].best_j);
        }
        assert!(res.history.iter().all(|h| h.sigma.iter().all(|s| *s > 0.0)));
        if res.converged {
            let n = res.history.len();
            let tol = CeConfig::default().tolerance(2);
            let w = weighted_rms_norm(&res.history[n - 1].sigma, &res.history[n - 2].sigma, &tol)
                .unwrap();
            assert!(w <= 1.0);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let bounds = Bounds::new(vec![-1.0; 3], vec![2.0; 3]).unwrap();
        let target = bowl_target(&[0.5, 0.1, 1.2]);
        let run = || ce_optimize(&identity, &target, &bounds, &CeConfig::default(), RngSeed(99)).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.x_opt, b.x_opt);
        assert_eq!(a.final_dist, b.final_dist);
    }

    #[test]
    fn every_sample_failing_is_an_error() {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let fail = |_: &[f64]| -> Result<Vec<Vec<f64>>, ForwardError> {
            Err(ForwardError::Dimension { expected: 0, actual: 1 })
        };
        let err = ce_optimize(&fail, &bowl_target(&[1.0]), &bounds, &CeConfig::default(), RngSeed(0))
            .unwrap_err();
        assert_eq!(err, CeError::AllSamplesFailed { iteration: 1 });
    }

    #[test]
    fn history_csv_layout() {
        let bounds = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let res = ce_optimize(&identity, &bowl_target(&[0.5, 0.5]), &bounds, &CeConfig::default(), RngSeed(2))
            .unwrap();
        let mut buf = Vec::new();
        res.write_history_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "iter,mu_1,mu_2,sigma_1,sigma_2,gamma_hat,best_j"
        );
        assert_eq!(text.lines().count(), res.history.len() + 1);
    }
}
