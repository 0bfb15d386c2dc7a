//! Pairwise similarity scores between client models, plus cost counters.
//!
//! Inverse loss evaluates client `i`'s model on every training sample of
//! client `j` and is charged one forward pass per sample; the three
//! parameter-space metrics cost one pass over a length-P vector each.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{empirical_risk, Dataset, ModelKind};
use crate::params::{dot, l2_distance, l2_norm};

/// Floor applied to the denominator of both inverse metrics.
pub const EPS_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetricKind {
    InvLoss,
    InvL2,
    CosWeight,
    CosGrad,
}

impl SimilarityMetricKind {
    pub const ALL: [SimilarityMetricKind; 4] = [
        SimilarityMetricKind::InvLoss,
        SimilarityMetricKind::CosGrad,
        SimilarityMetricKind::CosWeight,
        SimilarityMetricKind::InvL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityMetricKind::InvLoss => "inv_loss",
            SimilarityMetricKind::InvL2 => "inv_l2",
            SimilarityMetricKind::CosWeight => "cos_weight",
            SimilarityMetricKind::CosGrad => "cos_grad",
        }
    }

    /// Cosine metrics live in [-1, 1]; the inverse metrics are positive.
    pub fn is_cosine(self) -> bool {
        matches!(
            self,
            SimilarityMetricKind::CosWeight | SimilarityMetricKind::CosGrad
        )
    }
}

impl fmt::Display for SimilarityMetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimilarityMetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown similarity metric `{s}`")))
    }
}

/// Running totals of the work spent on similarity evaluation. Shared
/// between worker threads, hence atomic.
#[derive(Debug, Default)]
pub struct CostLedger {
    forward_passes: AtomicU64,
    param_ops: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTotals {
    pub forward_passes: u64,
    pub param_ops: u64,
}

impl std::ops::Add for CostTotals {
    type Output = CostTotals;

    fn add(self, o: CostTotals) -> CostTotals {
        CostTotals {
            forward_passes: self.forward_passes + o.forward_passes,
            param_ops: self.param_ops + o.param_ops,
        }
    }
}

impl std::ops::Sub for CostTotals {
    type Output = CostTotals;

    fn sub(self, o: CostTotals) -> CostTotals {
        CostTotals {
            forward_passes: self.forward_passes - o.forward_passes,
            param_ops: self.param_ops - o.param_ops,
        }
    }
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_forward_passes(&self, n: u64) {
        self.forward_passes.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_param_ops(&self, n: u64) {
        self.param_ops.fetch_add(n, Ordering::Relaxed);
    }

    pub fn totals(&self) -> CostTotals {
        CostTotals {
            forward_passes: self.forward_passes.load(Ordering::Relaxed),
            param_ops: self.param_ops.load(Ordering::Relaxed),
        }
    }
}

/// `1 / max(sum of losses of w_i over data_j, EPS_CLAMP)`.
pub fn inv_loss_similarity(
    w_i: &[f64],
    model: &ModelKind,
    data_j: &Dataset,
    ledger: &CostLedger,
) -> Result<f64> {
    let total = empirical_risk(model, w_i, data_j)?;
    ledger.add_forward_passes(data_j.len() as u64);
    Ok(1.0 / total.max(EPS_CLAMP))
}

/// `1 / max(||w_i - w_j||, EPS_CLAMP)`.
pub fn inv_l2_similarity(w_i: &[f64], w_j: &[f64], ledger: &CostLedger) -> Result<f64> {
    let d = l2_distance(w_i, w_j)?;
    ledger.add_param_ops(1);
    Ok(1.0 / d.max(EPS_CLAMP))
}

/// Cosine of the angle between `a` and `b`; 0 if either is the zero vector.
fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let ab = dot(a, b)?;
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((ab / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cos_weight_similarity(w_i: &[f64], w_j: &[f64], ledger: &CostLedger) -> Result<f64> {
    let c = cosine(w_i, w_j)?;
    ledger.add_param_ops(1);
    Ok(c)
}

/// Cosine between the displacements `w_i - w0_i` and `w_j - w0_j`.
pub fn cos_grad_similarity(
    w_i: &[f64],
    w0_i: &[f64],
    w_j: &[f64],
    w0_j: &[f64],
    ledger: &CostLedger,
) -> Result<f64> {
    let n = w_i.len();
    for other in [w0_i, w_j, w0_j] {
        if other.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: other.len(),
            });
        }
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let a = w_i[k] - w0_i[k];
        let b = w_j[k] - w0_j[k];
        ab += a * b;
        aa += a * a;
        bb += b * b;
    }
    ledger.add_param_ops(1);
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// What one client exposes to its peers for scoring.
#[derive(Debug, Clone, Copy)]
pub struct PeerView<'a> {
    pub params: &'a [f64],
    pub init: &'a [f64],
    pub train: &'a Dataset,
}

/// Score of `peer` as seen from `me` under `metric`.
pub fn similarity(
    metric: SimilarityMetricKind,
    model: &ModelKind,
    me: PeerView<'_>,
    peer: PeerView<'_>,
    ledger: &CostLedger,
) -> Result<f64> {
    match metric {
        SimilarityMetricKind::InvLoss => inv_loss_similarity(me.params, model, peer.train, ledger),
        SimilarityMetricKind::InvL2 => inv_l2_similarity(me.params, peer.params, ledger),
        SimilarityMetricKind::CosWeight => cos_weight_similarity(me.params, peer.params, ledger),
        SimilarityMetricKind::CosGrad => {
            cos_grad_similarity(me.params, me.init, peer.params, peer.init, ledger)
        }
    }
}
