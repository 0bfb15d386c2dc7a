//! Trainable models over flat parameter vectors.
//!
//! Two architectures are supported: a bias-free linear regressor trained
//! with squared error, and a one-hidden-layer ReLU MLP trained with softmax
//! cross-entropy. Both read their weights straight out of a
//! [`ParamVector`], so the simulator never needs to know about layers.
//!
//! Loss convention: [`empirical_risk`] returns the *sum* of per-sample
//! losses (what the inverse-loss similarity consumes), while
//! [`risk_gradient`] differentiates the *mean* (what training consumes).

mod optim;

pub use optim::{optimizer_step, OptimizerKind, OptimizerState};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GradientVector, ParamVector};

/// Evaluation of large datasets is chunked to bound activation memory.
const EVAL_CHUNK: usize = 1024;

/// A labelled sample matrix. Targets are real values for regression and
/// class indices (stored as whole-valued `f64`) for classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub targets: Vec<f64>,
    pub cluster_id: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, targets: Vec<f64>, cluster_id: usize) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::Dimension {
                expected: features.nrows(),
                actual: targets.len(),
            });
        }
        Ok(Dataset {
            features,
            targets,
            cluster_id,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            cluster_id: self.cluster_id,
        }
    }

    pub fn class_of(&self, row: usize) -> usize {
        self.targets[row] as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    LinearRegressor {
        dim: usize,
    },
    MlpClassifier {
        input: usize,
        hidden: usize,
        classes: usize,
    },
}

impl ModelKind {
    pub fn num_params(&self) -> usize {
        match *self {
            ModelKind::LinearRegressor { dim } => dim,
            ModelKind::MlpClassifier {
                input,
                hidden,
                classes,
            } => hidden * input + hidden + classes * hidden + classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            ModelKind::LinearRegressor { dim } => dim,
            ModelKind::MlpClassifier { input, .. } => input,
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self, ModelKind::MlpClassifier { .. })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut w = Vec::with_capacity(self.num_params());
        let mut fill = |count: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            w.extend((0..count).map(|_| rng.random_range(-bound..bound)));
        };
        match *self {
            ModelKind::LinearRegressor { dim } => fill(dim, dim),
            ModelKind::MlpClassifier {
                input,
                hidden,
                classes,
            } => {
                fill(hidden * input + hidden, input);
                fill(classes * hidden + classes, hidden);
            }
        }
        ParamVector::new(w)
    }

    fn check(&self, w: &[f64], data: &Dataset) -> Result<()> {
        if w.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                actual: w.len(),
            });
        }
        if data.dim() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: data.dim(),
            });
        }
        if data.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        if let ModelKind::MlpClassifier { classes, .. } = *self {
            if let Some(&bad) = data
                .targets
                .iter()
                .find(|&&y| y < 0.0 || y.fract() != 0.0 || y as usize >= classes)
            {
                return Err(Error::invalid(format!(
                    "class target {bad} outside 0..{classes}"
                )));
            }
        }
        Ok(())
    }
}

/// Borrowed views of the MLP's weight blocks inside a flat vector.
struct MlpView<'a> {
    w1: ArrayView2<'a, f64>,
    b1: ArrayView1<'a, f64>,
    w2: ArrayView2<'a, f64>,
    b2: ArrayView1<'a, f64>,
}

struct MlpViewMut<'a> {
    w1: ArrayViewMut2<'a, f64>,
    b1: ArrayViewMut1<'a, f64>,
    w2: ArrayViewMut2<'a, f64>,
    b2: ArrayViewMut1<'a, f64>,
}

fn mlp_view(w: &[f64], input: usize, hidden: usize, classes: usize) -> MlpView<'_> {
    let (w1, rest) = w.split_at(hidden * input);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(classes * hidden);
    MlpView {
        w1: ArrayView2::from_shape((hidden, input), w1).expect("w1 block"),
        b1: ArrayView1::from(b1),
        w2: ArrayView2::from_shape((classes, hidden), w2).expect("w2 block"),
        b2: ArrayView1::from(b2),
    }
}

fn mlp_view_mut(w: &mut [f64], input: usize, hidden: usize, classes: usize) -> MlpViewMut<'_> {
    let (w1, rest) = w.split_at_mut(hidden * input);
    let (b1, rest) = rest.split_at_mut(hidden);
    let (w2, b2) = rest.split_at_mut(classes * hidden);
    MlpViewMut {
        w1: ArrayViewMut2::from_shape((hidden, input), w1).expect("w1 block"),
        b1: ArrayViewMut1::from(b1),
        w2: ArrayViewMut2::from_shape((classes, hidden), w2).expect("w2 block"),
        b2: ArrayViewMut1::from(b2),
    }
}

/// Hidden pre-activations and output logits for a batch.
fn mlp_forward(view: &MlpView<'_>, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let n = x.nrows();
    let mut pre = Array2::zeros((n, view.w1.nrows()));
    general_mat_mul(1.0, &x, &view.w1.t(), 0.0, &mut pre);
    pre += &view.b1;
    let hidden = pre.mapv(|v| v.max(0.0));
    let mut logits = Array2::zeros((n, view.w2.nrows()));
    general_mat_mul(1.0, &hidden, &view.w2.t(), 0.0, &mut logits);
    logits += &view.b2;
    (pre, logits)
}

fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max + row.fold(0.0, |acc, &z| acc + (z - max).exp()).ln()
}

/// Sum of per-sample losses over `data`.
pub fn empirical_risk(model: &ModelKind, w: &[f64], data: &Dataset) -> Result<f64> {
    model.check(w, data)?;
    Ok(match *model {
        ModelKind::LinearRegressor { .. } => {
            let preds = data.features.dot(&ArrayView1::from(w));
            preds
                .iter()
                .zip(&data.targets)
                .fold(0.0, |acc, (p, y)| acc + (p - y) * (p - y))
        }
        ModelKind::MlpClassifier {
            input,
            hidden,
            classes,
        } => {
            let view = mlp_view(w, input, hidden, classes);
            let mut total = 0.0;
            for start in (0..data.len()).step_by(EVAL_CHUNK) {
                let end = (start + EVAL_CHUNK).min(data.len());
                let (_, logits) = mlp_forward(&view, data.features.slice(s![start..end, ..]));
                for (r, row) in logits.rows().into_iter().enumerate() {
                    total += log_sum_exp(row) - row[data.class_of(start + r)];
                }
            }
            total
        }
    })
}

/// Mean per-sample loss, `empirical_risk / n`.
pub fn mean_risk(model: &ModelKind, w: &[f64], data: &Dataset) -> Result<f64> {
    Ok(empirical_risk(model, w, data)? / data.len() as f64)
}

/// Gradient of the mean per-sample loss over `batch`.
pub fn risk_gradient(model: &ModelKind, w: &[f64], batch: &Dataset) -> Result<GradientVector> {
    model.check(w, batch)?;
    let n = batch.len() as f64;
    let mut grad = ParamVector::zeros(model.num_params());
    match *model {
        ModelKind::LinearRegressor { .. } => {
            let x = &batch.features;
            let mut residual = x.dot(&ArrayView1::from(w));
            for (r, y) in residual.iter_mut().zip(&batch.targets) {
                *r = 2.0 * (*r - y) / n;
            }
            let g = x.t().dot(&residual);
            grad.copy_from_slice(g.as_slice().expect("contiguous gradient"));
        }
        ModelKind::MlpClassifier {
            input,
            hidden,
            classes,
        } => {
            let view = mlp_view(w, input, hidden, classes);
            let x = batch.features.view();
            let (pre, mut dlogits) = mlp_forward(&view, x);
            // softmax minus one-hot, scaled by 1/n
            for (r, mut row) in dlogits.rows_mut().into_iter().enumerate() {
                let lse = log_sum_exp(row.view());
                row.mapv_inplace(|z| (z - lse).exp() / n);
                row[batch.class_of(r)] -= 1.0 / n;
            }
            let act = pre.mapv(|v| v.max(0.0));
            let mut dhidden = dlogits.dot(&view.w2);
            dhidden.zip_mut_with(&pre, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0
                }
            });
            let mut gv = mlp_view_mut(&mut grad, input, hidden, classes);
            general_mat_mul(1.0, &dlogits.t(), &act, 0.0, &mut gv.w2);
            gv.b2.assign(&dlogits.sum_axis(Axis(0)));
            general_mat_mul(1.0, &dhidden.t(), &x, 0.0, &mut gv.w1);
            gv.b1.assign(&dhidden.sum_axis(Axis(0)));
        }
    }
    Ok(grad)
}

/// Output logits (classification) or predictions (regression, one column).
pub fn predict(model: &ModelKind, w: &[f64], data: &Dataset) -> Result<Array2<f64>> {
    model.check(w, data)?;
    Ok(match *model {
        ModelKind::LinearRegressor { .. } => data
            .features
            .dot(&ArrayView1::from(w))
            .insert_axis(Axis(1)),
        ModelKind::MlpClassifier {
            input,
            hidden,
            classes,
        } => mlp_forward(&mlp_view(w, input, hidden, classes), data.features.view()).1,
    })
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax logit matches the target class.
pub fn accuracy(model: &ModelKind, w: &[f64], data: &Dataset) -> Result<f64> {
    let ModelKind::MlpClassifier {
        input,
        hidden,
        classes,
    } = *model
    else {
        return Err(Error::NotClassification);
    };
    model.check(w, data)?;
    let view = mlp_view(w, input, hidden, classes);
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let (_, logits) = mlp_forward(&view, data.features.slice(s![start..end, ..]));
        correct += logits
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(r, row)| argmax(row.view()) == data.class_of(start + r))
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Runs `epochs` passes of minibatch training over `data`, shuffling each
/// epoch with `rng`. `batch_size == None` takes one full-batch step per epoch.
pub fn train_epochs<R: Rng + ?Sized>(
    model: &ModelKind,
    w: &mut ParamVector,
    data: &Dataset,
    opt: &mut OptimizerState,
    epochs: usize,
    batch_size: Option<usize>,
    rng: &mut R,
) -> Result<()> {
    for _ in 0..epochs {
        match batch_size {
            Some(b) if b < data.len() => {
                let mut order: Vec<usize> = (0..data.len()).collect();
                order.shuffle(rng);
                for chunk in order.chunks(b) {
                    let g = risk_gradient(model, w, &data.subset(chunk))?;
                    opt.step(w, &g)?;
                }
            }
            _ => {
                let g = risk_gradient(model, w, data)?;
                opt.step(w, &g)?;
            }
        }
    }
    Ok(())
}
