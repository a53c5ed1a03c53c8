//! Closed-form validation-loss curves for scenario testing.
//!
//! Each curve is `a * exp(-rate * s) + floor + max(0, s - turn_at) * turn_rate`:
//! an exponential decay towards `floor`, optionally followed by a linear
//! rise that starts at `turn_at` (a task that begins to overfit).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::LossTrajectory;
use crate::error::{CobaError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curve {
    pub amplitude: f64,
    pub rate: f64,
    pub floor: f64,
    pub turn: Option<Turn>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turn {
    pub at: f64,
    pub rate: f64,
}

impl Curve {
    pub fn decay(amplitude: f64, rate: f64, floor: f64) -> Self {
        Self { amplitude, rate, floor, turn: None }
    }

    pub fn with_turn(mut self, at: f64, rate: f64) -> Self {
        self.turn = Some(Turn { at, rate });
        self
    }

    pub fn value(&self, s: f64) -> f64 {
        let rise = self.turn.map_or(0.0, |t| (s - t.at).max(0.0) * t.rate);
        self.amplitude * (-self.rate * s).exp() + self.floor + rise
    }
}

/// Gaussian observation noise, multiplicative on the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub rel_sigma: f64,
    pub seed: u64,
}

/// Samples `curves` at steps `0..len`.
pub fn sample_curves(
    names: &[&str],
    curves: &[Curve],
    len: usize,
    noise: Option<Noise>,
) -> Result<LossTrajectory> {
    if names.len() != curves.len() {
        return Err(CobaError::Argument("one name per curve required".into()));
    }
    let mut jitter = match noise {
        Some(n) => {
            let normal = Normal::new(0.0, n.rel_sigma)
                .map_err(|e| CobaError::Argument(format!("noise sigma: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
            Box::new(move || normal.sample(&mut rng)) as Box<dyn FnMut() -> f64>
        }
        None => Box::new(|| 0.0),
    };
    let rows = (0..len)
        .map(|s| {
            curves
                .iter()
                .map(|c| (c.value(s as f64) * (1.0 + jitter())).max(1e-9))
                .collect()
        })
        .collect();
    LossTrajectory::new(
        names.iter().map(|n| n.to_string()).collect(),
        (0..len as u64).collect(),
        rows,
    )
}

/// Step at which task 1 of [`divergence_scenario`] turns upward.
pub const DIVERGENCE_TURN: usize = 300;

/// Generator seed used by the divergence scenario checks.
pub const DIVERGENCE_SEED: u64 = 20_240_601;

/// Two tasks over 600 steps. Task 1 converges quickly, flattens and starts
/// rising linearly at step 300; task 2 keeps converging slowly throughout.
pub fn divergence_scenario(seed: u64) -> Result<LossTrajectory> {
    let curves = [
        Curve::decay(0.7, 0.03, 0.3).with_turn(DIVERGENCE_TURN as f64, 0.005),
        Curve::decay(0.3, 0.002, 0.7),
    ];
    sample_curves(
        &["fast", "slow"],
        &curves,
        2 * DIVERGENCE_TURN,
        Some(Noise { rel_sigma: 1e-4, seed }),
    )
}

/// Step at which task B of [`three_task_turn_scenario`] starts to diverge.
pub const THREE_TASK_TURN: usize = 400;

/// Three tasks A, B, C. B drops fastest, flattens first and turns upward at
/// step 400; A and C keep converging at different rates.
pub fn three_task_turn_scenario() -> Result<LossTrajectory> {
    let curves = [
        Curve::decay(0.3, 0.004, 0.7),
        Curve::decay(0.8, 0.05, 0.2).with_turn(THREE_TASK_TURN as f64, 0.006),
        Curve::decay(0.45, 0.01, 0.55),
    ];
    sample_curves(&["A", "B", "C"], &curves, 2 * THREE_TASK_TURN, None)
}
