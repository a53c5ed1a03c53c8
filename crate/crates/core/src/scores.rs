//! Convergence scores computed from per-task slopes.
//!
//! * RCS ranks tasks against each other: the slowest-converging task (the
//!   largest signed slope) gets the largest score.
//! * ACS compares each task's current slope with its own recent slopes, so a
//!   task whose slope drifts from negative towards zero or above loses score.
//! * The divergence factor tracks the largest slope over the whole run and
//!   decides how much of the final weight comes from RCS versus ACS.

use std::collections::VecDeque;
use std::ops::Deref;

use crate::error::{CobaError, Result};

/// Denominator guard shared by every normalization in this module.
pub const EPS_DEN: f64 = 1e-12;

/// Default softmax temperature for the divergence factor.
pub const DEFAULT_TAU: f64 = 5.0;

/// A vector of per-task scores, usually on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    /// Wraps raw values without checking that they lie on the simplex.
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(CobaError::Argument("uniform weights need at least one task".into()));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry (first one on ties).
    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > self.0[best] { i } else { best })
    }

    /// Index of the smallest entry (first one on ties).
    pub fn argmin(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v < self.0[best] { i } else { best })
    }
}

impl Deref for ScoreVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(v: ScoreVector) -> Self {
        v.0
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(CobaError::Argument(format!("{what}: empty input")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(CobaError::Argument(format!("{what}: non-finite value {v}")));
    }
    Ok(())
}

/// Softmax with max-subtraction.
pub fn stable_softmax(values: &[f64]) -> Result<ScoreVector> {
    check_finite(values, "softmax")?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ScoreVector(exps.into_iter().map(|e| e / sum).collect()))
}

/// Pre-softmax RCS arguments `K * alpha_i / sum_j |alpha_j|`.
///
/// Returns all zeros when the slopes are (numerically) all zero.
pub fn rcs_arguments(slopes: &[f64], eps_den: f64) -> Result<Vec<f64>> {
    check_finite(slopes, "relative convergence scores")?;
    let k = slopes.len() as f64;
    let abs_sum: f64 = slopes.iter().map(|a| a.abs()).sum();
    if abs_sum < eps_den {
        return Ok(vec![0.0; slopes.len()]);
    }
    Ok(slopes.iter().map(|a| k * a / abs_sum).collect())
}

pub fn relative_convergence_scores(slopes: &[f64], eps_den: f64) -> Result<ScoreVector> {
    stable_softmax(&rcs_arguments(slopes, eps_den)?)
}

/// The most recent convergence slopes of one task, at most `capacity` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeHistory {
    task_id: usize,
    capacity: usize,
    alphas: VecDeque<f64>,
}

impl SlopeHistory {
    pub fn new(task_id: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CobaError::Config("slope history capacity must be positive".into()));
        }
        Ok(Self { task_id, capacity, alphas: VecDeque::with_capacity(capacity) })
    }

    pub fn from_slopes(task_id: usize, capacity: usize, slopes: &[f64]) -> Result<Self> {
        let mut h = Self::new(task_id, capacity)?;
        for &a in slopes {
            h.push(a)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, alpha: f64) -> Result<()> {
        if !alpha.is_finite() {
            return Err(CobaError::data(format!(
                "task {}: non-finite slope {alpha}",
                self.task_id
            )));
        }
        if self.alphas.len() == self.capacity {
            self.alphas.pop_front();
        }
        self.alphas.push_back(alpha);
        Ok(())
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn latest(&self) -> Option<f64> {
        self.alphas.back().copied()
    }

    pub fn alphas(&self) -> impl Iterator<Item = f64> + '_ {
        self.alphas.iter().copied()
    }

    /// Pre-softmax ACS argument `-N' * alpha(t) / sum_j |alpha(j)|`.
    ///
    /// Written as `-alpha(t) / mean|alpha|`, with the mean taken relative to
    /// the first entry so that a constant history yields exactly -sign(alpha).
    pub fn acs_argument(&self, eps_den: f64) -> Result<f64> {
        let latest = self.latest().ok_or_else(|| {
            CobaError::Argument(format!("task {}: empty slope history", self.task_id))
        })?;
        let n = self.alphas.len() as f64;
        let pivot = self.alphas[0].abs();
        let mean_abs = pivot + self.alphas.iter().map(|a| a.abs() - pivot).sum::<f64>() / n;
        if n * mean_abs < eps_den {
            return Ok(0.0);
        }
        Ok(-latest / mean_abs)
    }
}

pub fn acs_arguments(histories: &[SlopeHistory], eps_den: f64) -> Result<Vec<f64>> {
    if histories.is_empty() {
        return Err(CobaError::Argument("absolute convergence scores: no tasks".into()));
    }
    histories.iter().map(|h| h.acs_argument(eps_den)).collect()
}

pub fn absolute_convergence_scores(histories: &[SlopeHistory], eps_den: f64) -> Result<ScoreVector> {
    stable_softmax(&acs_arguments(histories, eps_den)?)
}

/// Running state of the divergence factor.
///
/// Every scored step contributes one value `z_j = -tau * alpha_max(j) / mean(alpha_max(1..=j))`,
/// which is frozen once computed. The factor at step `t` is
/// `min(t * softmax(z)[t], 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceState {
    tau: f64,
    eps_den: f64,
    cap: Option<usize>,
    steps: u64,
    // Mean of alpha_max over all scored steps; equals prefix_sum / steps.
    mean_alpha_max: f64,
    z_seq: VecDeque<f64>,
    // Online softmax accumulators over the full z sequence (uncapped mode).
    z_max: f64,
    exp_sum: f64,
}

impl DivergenceState {
    pub fn new(tau: f64, eps_den: f64, cap: Option<usize>) -> Result<Self> {
        if !(tau.is_finite() && tau > 1.0) {
            return Err(CobaError::Config(format!("tau must be finite and > 1, got {tau}")));
        }
        if !(eps_den.is_finite() && eps_den > 0.0) {
            return Err(CobaError::Config(format!("eps_den must be positive, got {eps_den}")));
        }
        if cap == Some(0) {
            return Err(CobaError::Config("divergence history cap must be positive".into()));
        }
        Ok(Self {
            tau,
            eps_den,
            cap,
            steps: 0,
            mean_alpha_max: 0.0,
            z_seq: VecDeque::new(),
            z_max: f64::NEG_INFINITY,
            exp_sum: 0.0,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of scored steps so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Sum of `alpha_max` over every scored step.
    pub fn prefix_sum(&self) -> f64 {
        self.mean_alpha_max * self.steps as f64
    }

    /// Retained z values, oldest first.
    pub fn z_seq(&self) -> impl Iterator<Item = f64> + '_ {
        self.z_seq.iter().copied()
    }

    /// Scores one more step given the signed maximum slope across tasks.
    pub fn step(&mut self, alpha_max: f64) -> Result<f64> {
        if !alpha_max.is_finite() {
            return Err(CobaError::data(format!("non-finite alpha_max {alpha_max}")));
        }
        self.steps += 1;
        let t = self.steps as f64;
        // Incremental mean: a constant stream keeps the mean bit-exact.
        self.mean_alpha_max += (alpha_max - self.mean_alpha_max) / t;
        // Guard relative to the current slope so a constant stream of any
        // magnitude keeps z = -tau at every step.
        let z = if (t * self.mean_alpha_max).abs() <= self.eps_den * alpha_max.abs() {
            0.0
        } else {
            -self.tau * alpha_max / self.mean_alpha_max
        };
        self.z_seq.push_back(z);

        let df = match self.cap {
            None => {
                if z > self.z_max {
                    self.exp_sum = self.exp_sum * (self.z_max - z).exp() + 1.0;
                    self.z_max = z;
                } else {
                    self.exp_sum += (z - self.z_max).exp();
                }
                t * (z - self.z_max).exp() / self.exp_sum
            }
            Some(cap) => {
                if self.z_seq.len() > cap {
                    self.z_seq.pop_front();
                }
                windowed_factor(self.z_seq.iter().copied())
            }
        };
        Ok(df.min(1.0))
    }
}

// `len * softmax(z)[last]` over a finite slice of z values.
fn windowed_factor(z: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = z.clone().fold(f64::NEG_INFINITY, f64::max);
    let (count, sum, last) = z.fold((0usize, 0.0, 0.0), |(c, s, _), v| {
        let e = (v - max).exp();
        (c + 1, s + e, e)
    });
    count as f64 * last / sum
}

/// Final weights `df * rcs + (1 - df) * acs`.
pub fn combine_weights(rcs: &ScoreVector, acs: &ScoreVector, df: f64) -> Result<ScoreVector> {
    if rcs.len() != acs.len() {
        return Err(CobaError::Argument(format!(
            "score length mismatch: rcs has {}, acs has {}",
            rcs.len(),
            acs.len()
        )));
    }
    if !(0.0..=1.0).contains(&df) {
        return Err(CobaError::Argument(format!("divergence factor {df} outside [0, 1]")));
    }
    Ok(ScoreVector(
        rcs.iter().zip(acs.iter()).map(|(r, a)| df * r + (1.0 - df) * a).collect(),
    ))
}
