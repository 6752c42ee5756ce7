//! Weighted relative-error discrepancy between model output and data.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MisfitError {
    #[error("block {block}: expected {expected} values, got {actual}")]
    ShapeMismatch {
        block: usize,
        expected: usize,
        actual: usize,
    },
    #[error("data block '{0}' has zero norm but positive weight")]
    ZeroDataNorm(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
}

/// One observed series, e.g. hospitalizations.
#[derive(Debug, Clone, PartialEq)]
pub struct QoiBlock {
    pub label: String,
    pub values: Vec<f64>,
}

/// Observed data partitioned into blocks with convex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QoiTarget {
    blocks: Vec<QoiBlock>,
    weights: Vec<f64>,
    // Squared norms of the data blocks, cached.
    norms_sq: Vec<f64>,
}

impl QoiTarget {
    /// Validates that weights are nonnegative and sum to one, every block is
    /// nonempty and every weighted block has a nonzero norm.
    pub fn new(blocks: Vec<QoiBlock>, weights: Vec<f64>) -> Result<Self, MisfitError> {
        if blocks.is_empty() || blocks.len() != weights.len() {
            return Err(MisfitError::InvalidTarget(format!(
                "{} blocks but {} weights",
                blocks.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(MisfitError::InvalidTarget(format!("negative weight in {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MisfitError::InvalidTarget(format!("weights sum to {total}, not 1")));
        }
        let mut norms_sq = Vec::with_capacity(blocks.len());
        for (b, w) in blocks.iter().zip(&weights) {
            if b.values.is_empty() {
                return Err(MisfitError::InvalidTarget(format!("block '{}' is empty", b.label)));
            }
            let nsq: f64 = b.values.iter().map(|v| v * v).sum();
            if *w > 0.0 && !(nsq > 0.0) {
                return Err(MisfitError::ZeroDataNorm(b.label.clone()));
            }
            norms_sq.push(nsq);
        }
        Ok(Self {
            blocks,
            weights,
            norms_sq,
        })
    }

    /// Hospitalization/death pair weighted by `omega` and `1 - omega`.
    pub fn two_block(
        hospitalized: Vec<f64>,
        deaths: Vec<f64>,
        omega: f64,
    ) -> Result<Self, MisfitError> {
        if !(0.0..=1.0).contains(&omega) {
            return Err(MisfitError::InvalidTarget(format!("omega {omega} outside [0, 1]")));
        }
        Self::new(
            vec![
                QoiBlock {
                    label: "H".into(),
                    values: hospitalized,
                },
                QoiBlock {
                    label: "D".into(),
                    values: deaths,
                },
            ],
            vec![omega, 1.0 - omega],
        )
    }

    pub fn blocks(&self) -> &[QoiBlock] {
        &self.blocks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same data with different weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self, MisfitError> {
        Self::new(self.blocks.clone(), weights)
    }
}

/// `sum_k w_k * |data_k - model_k|^2 / |data_k|^2`.
///
/// Blocks with zero weight are shape-checked but contribute nothing.
pub fn misfit<B: AsRef<[f64]>>(model: &[B], target: &QoiTarget) -> Result<f64, MisfitError> {
    if model.len() != target.blocks.len() {
        return Err(MisfitError::InvalidTarget(format!(
            "model has {} blocks, target has {}",
            model.len(),
            target.blocks.len()
        )));
    }
    let mut total = 0.0;
    for (k, (m, data)) in model.iter().zip(&target.blocks).enumerate() {
        let m = m.as_ref();
        if m.len() != data.values.len() {
            return Err(MisfitError::ShapeMismatch {
                block: k,
                expected: data.values.len(),
                actual: m.len(),
            });
        }
        let w = target.weights[k];
        if w == 0.0 {
            continue;
        }
        let diff_sq: f64 = m
            .iter()
            .zip(&data.values)
            .map(|(y, d)| (d - y) * (d - y))
            .sum();
        total += w * diff_sq / target.norms_sq[k];
    }
    Ok(total)
}
