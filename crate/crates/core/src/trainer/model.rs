//! Shared-trunk regression network with hand-written gradients.
//!
//! `yhat_i(x) = v_i . tanh(W x + b) + c_i`: one `d -> h` tanh trunk shared by
//! all tasks and one linear `h -> 1` head per task, trained with MSE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::data::Batch;
use crate::error::{CobaError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SharedTrunkModel {
    input_dim: usize,
    hidden: usize,
    num_tasks: usize,
    /// Row-major `hidden x input_dim`.
    pub trunk_w: Vec<f64>,
    pub trunk_b: Vec<f64>,
    /// Row-major `num_tasks x hidden`.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

/// Gradient of a scalar objective with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub trunk_w: Vec<f64>,
    pub trunk_b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl Gradients {
    fn zeros_like(m: &SharedTrunkModel) -> Self {
        Self {
            trunk_w: vec![0.0; m.trunk_w.len()],
            trunk_b: vec![0.0; m.trunk_b.len()],
            head_w: vec![0.0; m.head_w.len()],
            head_b: vec![0.0; m.head_b.len()],
        }
    }

    /// All entries in the same order as [`SharedTrunkModel::parameters`].
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.trunk_w, &self.trunk_b, &self.head_w, &self.head_b]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }
}

impl SharedTrunkModel {
    /// Trunk weights are drawn from `N(0, 1/d)`; biases and heads start at
    /// zero, so every head sees the same function at step 0.
    pub fn new(input_dim: usize, hidden: usize, num_tasks: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || num_tasks == 0 {
            return Err(CobaError::Config(format!(
                "model dimensions must be positive, got d={input_dim} h={hidden} K={num_tasks}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("positive sigma");
        Ok(Self {
            input_dim,
            hidden,
            num_tasks,
            trunk_w: (0..hidden * input_dim).map(|_| normal.sample(&mut rng)).collect(),
            trunk_b: vec![0.0; hidden],
            head_w: vec![0.0; num_tasks * hidden],
            head_b: vec![0.0; num_tasks],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn num_parameters(&self) -> usize {
        self.trunk_w.len() + self.trunk_b.len() + self.head_w.len() + self.head_b.len()
    }

    /// Flat copy: trunk weights, trunk bias, head weights, head biases.
    pub fn parameters(&self) -> Vec<f64> {
        [&self.trunk_w, &self.trunk_b, &self.head_w, &self.head_b]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(CobaError::Argument(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for p in self.params_mut() {
            *p = it.next().expect("length checked");
        }
        Ok(())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.trunk_w
            .iter_mut()
            .chain(self.trunk_b.iter_mut())
            .chain(self.head_w.iter_mut())
            .chain(self.head_b.iter_mut())
    }

    fn check_batch(&self, batch: &Batch, task: usize) -> Result<()> {
        if task >= self.num_tasks {
            return Err(CobaError::Argument(format!(
                "task {task} out of range for {} heads",
                self.num_tasks
            )));
        }
        if batch.input_dim() != self.input_dim || batch.x.len() != batch.len() * self.input_dim {
            return Err(CobaError::Argument(format!(
                "batch has input dimension {}, model expects {}",
                batch.input_dim(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &[f64], out: &mut [f64]) {
        let d = self.input_dim;
        for (j, a) in out.iter_mut().enumerate() {
            let row = &self.trunk_w[j * d..(j + 1) * d];
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.trunk_b[j];
            *a = z.tanh();
        }
    }

    fn head(&self, task: usize) -> &[f64] {
        &self.head_w[task * self.hidden..(task + 1) * self.hidden]
    }

    /// Prediction of head `task` for one input row.
    pub fn predict(&self, x: &[f64], task: usize) -> f64 {
        let mut a = vec![0.0; self.hidden];
        self.hidden_activations(x, &mut a);
        self.head(task).iter().zip(&a).map(|(v, ai)| v * ai).sum::<f64>() + self.head_b[task]
    }
}

/// Mean squared error of head `task` on `batch`. An empty batch has loss 0.
pub fn forward_loss(model: &SharedTrunkModel, batch: &Batch, task: usize) -> Result<f64> {
    model.check_batch(batch, task)?;
    if batch.is_empty() {
        return Ok(0.0);
    }
    let sse: f64 = batch
        .rows()
        .map(|(x, y)| (model.predict(x, task) - y).powi(2))
        .sum();
    Ok(sse / batch.len() as f64)
}

/// Gradient of `sum_i weights[i] * loss_i` plus the unweighted per-task losses.
///
/// Weights must be finite and non-negative but need not sum to one.
pub fn loss_and_gradient(
    model: &SharedTrunkModel,
    batches: &[&Batch],
    weights: &[f64],
) -> Result<(Vec<f64>, Gradients)> {
    let k = model.num_tasks;
    if batches.len() != k || weights.len() != k {
        return Err(CobaError::Argument(format!(
            "need {k} batches and {k} weights, got {} and {}",
            batches.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(CobaError::Argument(format!("task weight {w} is not finite and non-negative")));
    }
    let (d, h) = (model.input_dim, model.hidden);
    let mut grads = Gradients::zeros_like(model);
    let mut losses = Vec::with_capacity(k);
    let mut a = vec![0.0; h];
    let mut dz = vec![0.0; h];
    for (task, (batch, &w)) in batches.iter().zip(weights).enumerate() {
        model.check_batch(batch, task)?;
        if batch.is_empty() {
            losses.push(0.0);
            continue;
        }
        let n = batch.len() as f64;
        let v = model.head(task);
        let mut sse = 0.0;
        for (x, y) in batch.rows() {
            model.hidden_activations(x, &mut a);
            let yhat = v.iter().zip(&a).map(|(vj, aj)| vj * aj).sum::<f64>() + model.head_b[task];
            let err = yhat - y;
            sse += err * err;
            // d(w * mean(err^2)) / d yhat for this row.
            let g = 2.0 * w * err / n;
            grads.head_b[task] += g;
            let gv = &mut grads.head_w[task * h..(task + 1) * h];
            for j in 0..h {
                gv[j] += g * a[j];
                dz[j] = g * v[j] * (1.0 - a[j] * a[j]);
            }
            for j in 0..h {
                grads.trunk_b[j] += dz[j];
                let row = &mut grads.trunk_w[j * d..(j + 1) * d];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += dz[j] * xi;
                }
            }
        }
        losses.push(sse / n);
    }
    Ok((losses, grads))
}

/// Analytic gradient of the weighted objective `sum_i weights[i] * loss_i`.
pub fn weighted_backward(
    model: &SharedTrunkModel,
    batches: &[&Batch],
    weights: &[f64],
) -> Result<Gradients> {
    loss_and_gradient(model, batches, weights).map(|(_, g)| g)
}

/// In-place `theta <- theta - lr * g`. Non-finite gradients leave the model
/// untouched and return a data error.
pub fn sgd_step(model: &mut SharedTrunkModel, grads: &Gradients, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(CobaError::Argument(format!("learning rate must be positive, got {lr}")));
    }
    let flat = grads.to_flat();
    if flat.len() != model.num_parameters() {
        return Err(CobaError::Argument("gradient does not match model shape".into()));
    }
    if let Some(i) = flat.iter().position(|g| !g.is_finite()) {
        return Err(CobaError::data(format!("non-finite gradient entry {i}: {}", flat[i])));
    }
    for (p, g) in model.params_mut().zip(&flat) {
        *p -= lr * g;
    }
    if let Some(p) = model.parameters().iter().find(|p| !p.is_finite()) {
        return Err(CobaError::data(format!("parameter became non-finite ({p})")));
    }
    Ok(())
}
