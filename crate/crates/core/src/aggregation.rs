//! Merging a client's model with its sampled peers.
//!
//! The merge set is always the caller followed by its peers, so weight
//! vectors have length `m + 1` with the caller's weight first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationRule {
    FedAvg,
    FedSim,
}

impl AggregationRule {
    pub fn name(self) -> &'static str {
        match self {
            AggregationRule::FedAvg => "fedavg",
            AggregationRule::FedSim => "fedsim",
        }
    }
}

impl fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(AggregationRule::FedAvg),
            "fedsim" => Ok(AggregationRule::FedSim),
            other => Err(Error::invalid(format!("unknown aggregation rule `{other}`"))),
        }
    }
}

/// `N_j / sum N` over the caller and its peers.
pub fn fedavg_weights(self_size: usize, peer_sizes: &[usize]) -> Result<Vec<f64>> {
    if self_size == 0 || peer_sizes.contains(&0) {
        return Err(Error::invalid("train sizes must be >= 1"));
    }
    let total = (self_size + peer_sizes.iter().sum::<usize>()) as f64;
    Ok(std::iter::once(self_size)
        .chain(peer_sizes.iter().copied())
        .map(|n| n as f64 / total)
        .collect())
}

/// Maps a cosine score from [-1, 1] onto [0, 1] so it can act as a weight.
pub fn shift_cosine(score: f64) -> f64 {
    (score + 1.0) / 2.0
}

/// Similarity weights: the caller gets the largest peer score, then the
/// vector `[self, peers...]` is normalised. All-zero scores give uniform
/// weights. With no peers the caller keeps weight 1.
pub fn fedsim_weights(peer_scores: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = peer_scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::invalid(format!(
            "similarity weights must be finite and non-negative, got {bad}"
        )));
    }
    let own = peer_scores.iter().copied().fold(0.0, f64::max);
    let raw: Vec<f64> = std::iter::once(own).chain(peer_scores.iter().copied()).collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / raw.len() as f64; raw.len()]);
    }
    Ok(raw.into_iter().map(|s| s / total).collect())
}

/// Convex combination `sum_j weights[j] * params[j]`.
pub fn merge(params: &[&[f64]], weights: &[f64]) -> Result<ParamVector> {
    let first = params
        .first()
        .ok_or_else(|| Error::invalid("merge needs at least one model"))?;
    if weights.len() != params.len() {
        return Err(Error::Dimension {
            expected: params.len(),
            actual: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid(format!(
            "merge weights must be non-negative and sum to 1, got sum {total}"
        )));
    }
    if params.len() == 1 {
        return Ok(ParamVector::new(first.to_vec()));
    }
    let mut out = vec![0.0; first.len()];
    for (p, &a) in params.iter().zip(weights) {
        if p.len() != out.len() {
            return Err(Error::Dimension {
                expected: out.len(),
                actual: p.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += a * v;
        }
    }
    Ok(ParamVector::new(out))
}
