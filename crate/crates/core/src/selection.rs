//! Peer selection: softmax beliefs over peers and the baseline policies.
//!
//! A client's [`PeerBeliefs`] are indexed by *slot*: slot `s` refers to peer
//! `s` if `s < owner` and to peer `s + 1` otherwise, so the owner never
//! appears in its own distribution.

use rand::seq::index;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::SimilarityMetricKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SelectionPolicy {
    SimilaritySoftmax {
        metric: SimilarityMetricKind,
        tau: f64,
    },
    Random,
    Oracle,
    LocalOnly,
}

impl SelectionPolicy {
    /// Short method label used in file names and result tables.
    pub fn label(&self) -> &'static str {
        match self {
            SelectionPolicy::SimilaritySoftmax { metric, .. } => metric.name(),
            SelectionPolicy::Random => "random",
            SelectionPolicy::Oracle => "oracle",
            SelectionPolicy::LocalOnly => "local",
        }
    }

    pub fn metric(&self) -> Option<SimilarityMetricKind> {
        match self {
            SelectionPolicy::SimilaritySoftmax { metric, .. } => Some(*metric),
            _ => None,
        }
    }
}

/// `p_i = exp(tau * s_i) / sum_k exp(tau * s_k)`, evaluated after
/// subtracting the largest logit.
pub fn softmax_probs(scores: &[f64], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = scores.iter().map(|&s| tau * s).collect();
    softmax_of_logits(&logits)
}

fn softmax_of_logits(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logits.is_empty() {
        return Vec::new();
    }
    if !max.is_finite() {
        // every logit is -inf (or tau * s overflowed): fall back to uniform
        // over the entries attaining the maximum
        let hits = logits.iter().filter(|&&l| l == max).count() as f64;
        return logits
            .iter()
            .map(|&l| if l == max { 1.0 / hits } else { 0.0 })
            .collect();
    }
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerBeliefs {
    owner: usize,
    scores: Vec<f64>,
    observed: Vec<bool>,
    probs: Vec<f64>,
    logits: Vec<f64>,
}

impl PeerBeliefs {
    /// Uniform prior over the `num_clients - 1` peers of `owner`.
    pub fn new(owner: usize, num_clients: usize) -> Self {
        let peers = num_clients.saturating_sub(1);
        PeerBeliefs {
            owner,
            scores: vec![0.0; peers],
            observed: vec![false; peers],
            probs: vec![1.0 / peers as f64; peers],
            logits: vec![0.0; peers],
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn num_peers(&self) -> usize {
        self.probs.len()
    }

    pub fn peer_of(&self, slot: usize) -> usize {
        if slot < self.owner {
            slot
        } else {
            slot + 1
        }
    }

    pub fn slot_of(&self, peer: usize) -> Option<usize> {
        match peer.cmp(&self.owner) {
            std::cmp::Ordering::Less => Some(peer),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater if peer <= self.num_peers() => Some(peer - 1),
            std::cmp::Ordering::Greater => None,
        }
    }

    /// Latest score per slot, with never-observed slots holding the
    /// imputed value.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Score recorded for `peer`, if it has ever been observed.
    pub fn score_of(&self, peer: usize) -> Option<f64> {
        let slot = self.slot_of(peer)?;
        self.observed[slot].then(|| self.scores[slot])
    }
}

/// Records `observations` (peer id, score), overwriting earlier scores of
/// the same peers, imputes every never-observed peer with the mean of the
/// observed scores, and recomputes the softmax distribution.
pub fn update_beliefs(beliefs: &mut PeerBeliefs, observations: &[(usize, f64)], tau: f64) -> Result<()> {
    for &(peer, score) in observations {
        if !score.is_finite() {
            return Err(Error::invalid(format!("non-finite score {score} for peer {peer}")));
        }
        let slot = beliefs
            .slot_of(peer)
            .ok_or_else(|| Error::invalid(format!("peer {peer} is not a peer of {}", beliefs.owner)))?;
        beliefs.scores[slot] = score;
        beliefs.observed[slot] = true;
    }
    let (sum, count) = beliefs
        .scores
        .iter()
        .zip(&beliefs.observed)
        .filter(|(_, &o)| o)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    let imputed = if count == 0 { 0.0 } else { sum / count as f64 };
    for (s, &o) in beliefs.scores.iter_mut().zip(&beliefs.observed) {
        if !o {
            *s = imputed;
        }
    }
    beliefs.logits = beliefs.scores.iter().map(|&s| tau * s).collect();
    beliefs.probs = softmax_of_logits(&beliefs.logits);
    Ok(())
}

/// Sequential weighted draw without replacement over log-weights: draw one
/// index proportionally to `exp(logit)`, remove it, repeat. Working in the
/// log domain keeps later draws exact even when earlier winners dominate
/// the linear-scale probabilities.
fn draw_from_logits<R: Rng + ?Sized>(logits: &[f64], m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let available = logits.iter().filter(|&&l| l > f64::NEG_INFINITY).count();
    if m > available {
        return Err(Error::InsufficientPeers {
            requested: m,
            available,
        });
    }
    let mut remaining: Vec<usize> = (0..logits.len())
        .filter(|&i| logits[i] > f64::NEG_INFINITY)
        .collect();
    let mut picked = Vec::with_capacity(m);
    for _ in 0..m {
        let max = remaining
            .iter()
            .map(|&i| logits[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = remaining.iter().map(|&i| (logits[i] - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pos = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                pos = k;
                break;
            }
            u -= w;
        }
        picked.push(remaining.remove(pos));
    }
    Ok(picked)
}

/// Draws `m` distinct indices from `probs` sequentially without
/// replacement. Returned in draw order.
pub fn sample_peers<R: Rng + ?Sized>(probs: &[f64], m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let logits: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect();
    draw_from_logits(&logits, m, rng)
}

/// Peers (client ids) that `client` communicates with this round.
///
/// `cluster_ids` holds every client's true cluster; only the Oracle reads it.
/// The Oracle returns fewer than `m` peers when its cluster is too small.
pub fn select<R: Rng + ?Sized>(
    policy: &SelectionPolicy,
    beliefs: &PeerBeliefs,
    cluster_ids: &[usize],
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let peers = beliefs.num_peers();
    match policy {
        SelectionPolicy::LocalOnly => Ok(Vec::new()),
        SelectionPolicy::SimilaritySoftmax { .. } => Ok(draw_from_logits(&beliefs.logits, m, rng)?
            .into_iter()
            .map(|s| beliefs.peer_of(s))
            .collect()),
        SelectionPolicy::Random => {
            if m > peers {
                return Err(Error::InsufficientPeers {
                    requested: m,
                    available: peers,
                });
            }
            Ok(index::sample(rng, peers, m)
                .into_iter()
                .map(|s| beliefs.peer_of(s))
                .collect())
        }
        SelectionPolicy::Oracle => {
            let me = beliefs.owner();
            let mates: Vec<usize> = (0..cluster_ids.len())
                .filter(|&j| j != me && cluster_ids[j] == cluster_ids[me])
                .collect();
            Ok(mates.choose_multiple(rng, m.min(mates.len())).copied().collect())
        }
    }
}
