//! Sliding windows of validation loss ratios and their least-squares slopes.
//!
//! Each task keeps the ratio `loss(t) / loss(0)` for its most recent `N`
//! steps. The convergence slope of a task is the slope of the ordinary
//! least-squares line through those points: negative while the task is
//! still converging, positive once it starts to diverge.

use std::collections::VecDeque;

use crate::error::{CobaError, Result};

/// Smallest admissible base loss. A first observation below this is clamped.
pub const EPS_BASE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossRatioWindow {
    task_id: usize,
    capacity: usize,
    base_loss: Option<f64>,
    entries: VecDeque<(u64, f64)>,
}

/// Fitted line `ratio ≈ alpha * step + beta` over one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeEstimate {
    pub alpha: f64,
    pub beta: f64,
    pub n_points: usize,
}

impl SlopeEstimate {
    /// Whether the fit had enough distinct points to define a slope.
    pub fn is_solvable(&self) -> bool {
        self.n_points >= 2
    }
}

impl LossRatioWindow {
    pub fn new(task_id: usize, capacity: usize) -> Result<Self> {
        if capacity < 2 {
            return Err(CobaError::Config(format!(
                "window capacity must be at least 2, got {capacity}"
            )));
        }
        Ok(Self {
            task_id,
            capacity,
            base_loss: None,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// The step-0 loss every later observation is divided by, once known.
    pub fn base_loss(&self) -> Option<f64> {
        self.base_loss
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<(u64, f64)> {
        self.entries.back().copied()
    }

    /// Records `raw_loss` at `step` and returns the stored ratio.
    ///
    /// The first loss ever pushed becomes the base loss, so its ratio is 1.
    /// Once the window holds `capacity` entries the oldest one is dropped.
    pub fn push_loss(&mut self, step: u64, raw_loss: f64) -> Result<f64> {
        if !raw_loss.is_finite() || raw_loss < 0.0 {
            return Err(CobaError::data(format!(
                "task {}: loss at step {step} must be finite and non-negative, got {raw_loss}",
                self.task_id
            )));
        }
        if let Some((last, _)) = self.entries.back() {
            if step <= *last {
                return Err(CobaError::ordering(format!(
                    "task {}: step {step} does not follow step {last}",
                    self.task_id
                )));
            }
        }
        let base = *self.base_loss.get_or_insert(raw_loss.max(EPS_BASE));
        let ratio = raw_loss / base;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((step, ratio));
        Ok(ratio)
    }

    /// Ordinary least-squares slope over the current entries.
    ///
    /// Steps are centered on their mean before solving the 2x2 normal
    /// equations, so large step counts do not cost precision. Fewer than two
    /// points give a zero slope and the last ratio (or 0) as intercept.
    pub fn fit_slope(&self) -> SlopeEstimate {
        let n = self.entries.len();
        if n < 2 {
            return SlopeEstimate {
                alpha: 0.0,
                beta: self.last().map_or(0.0, |(_, r)| r),
                n_points: n,
            };
        }
        let nf = n as f64;
        let (sum_s, sum_y) = self
            .entries
            .iter()
            .fold((0.0, 0.0), |(ss, sy), &(s, y)| (ss + s as f64, sy + y));
        let mean_s = sum_s / nf;
        let mean_y = sum_y / nf;
        let (sxx, sxy) = self.entries.iter().fold((0.0, 0.0), |(xx, xy), &(s, y)| {
            let ds = s as f64 - mean_s;
            (xx + ds * ds, xy + ds * (y - mean_y))
        });
        if sxx <= 0.0 {
            return SlopeEstimate { alpha: 0.0, beta: mean_y, n_points: n };
        }
        let alpha = sxy / sxx;
        SlopeEstimate {
            alpha,
            beta: mean_y - alpha * mean_s,
            n_points: n,
        }
    }

    /// Snapshot of the `(step, ratio)` pairs, oldest first.
    pub fn window_view(&self) -> Vec<(u64, f64)> {
        self.entries.iter().copied().collect()
    }
}
