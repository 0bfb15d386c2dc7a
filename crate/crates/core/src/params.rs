//! Flat parameter-vector algebra.
//!
//! Every model in the simulator exposes its weights as one contiguous
//! `f64` vector. Merging, distances and displacement-from-init all work
//! on that flat view. Reductions run sequentially left to right so the
//! same inputs always produce the same bits.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model parameters flattened into a single vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

/// Same layout as [`ParamVector`]; used for gradients and for the
/// displacement `w_t - w_0` that stands in for a gradient direction.
pub type GradientVector = ParamVector;

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_len(self, other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scaled(&self, k: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * k).collect())
    }

    /// Cheap content fingerprint used to check that frozen clients stay frozen.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw bit patterns
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.0 {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y))
}

pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, x| acc + x * x).sqrt()
}

/// Euclidean distance `||a - b||` without allocating the difference.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(a
        .iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y))
        .sqrt())
}

/// `alpha * x + y`.
pub fn axpy(alpha: f64, x: &[f64], y: &[f64]) -> Result<ParamVector> {
    check_len(x, y)?;
    Ok(ParamVector(
        x.iter().zip(y).map(|(xi, yi)| alpha * xi + yi).collect(),
    ))
}

/// In-place `y += alpha * x`.
pub fn axpy_in_place(alpha: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len(x, y)?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
    Ok(())
}
