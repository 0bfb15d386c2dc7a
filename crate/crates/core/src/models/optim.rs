use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GradientVector, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Per-client optimizer state. Adam moments persist across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, num_params: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => num_params,
        };
        OptimizerState {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
        }
    }

    pub fn sgd(learning_rate: f64, num_params: usize) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate, num_params)
    }

    pub fn adam(learning_rate: f64, num_params: usize) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate, num_params)
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one update to `w` in place.
    pub fn step(&mut self, w: &mut [f64], g: &[f64]) -> Result<()> {
        if w.len() != g.len() {
            return Err(Error::Dimension {
                expected: w.len(),
                actual: g.len(),
            });
        }
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= lr * gi;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != w.len() {
                    return Err(Error::Dimension {
                        expected: self.m.len(),
                        actual: w.len(),
                    });
                }
                let (b1, b2) = (self.beta1, self.beta2);
                let t = self.step_count as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for i in 0..w.len() {
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    w[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

/// Returns the updated parameters, advancing the optimizer state.
pub fn optimizer_step(
    state: &mut OptimizerState,
    w: &ParamVector,
    g: &GradientVector,
) -> Result<ParamVector> {
    let mut out = w.clone();
    state.step(&mut out, g)?;
    Ok(out)
}
