//! The per-iteration weight engine and its baselines.
//!
//! A [`Scheduler`] consumes one validation loss per task per training step
//! and produces the task weights for the next step, together with every
//! intermediate quantity in a [`WeightRecord`]. All scheduler kinds share the
//! same diagnostic pipeline (ratios, slopes, RCS, ACS, DF); they only differ
//! in how the final weight vector is chosen.

use serde::{Deserialize, Serialize};

use crate::error::{CobaError, Result};
use crate::scores::{
    absolute_convergence_scores, combine_weights, relative_convergence_scores, DivergenceState,
    ScoreVector, SlopeHistory, DEFAULT_TAU, EPS_DEN,
};
use crate::slope::LossRatioWindow;

/// Default LBTW exponent.
pub const DEFAULT_LBTW_B: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerKind {
    Coba,
    Uniform,
    /// Loss-balanced task weighting with exponent `b`. Feeding validation
    /// losses gives the starred (validation) variant.
    Lbtw { b: f64 },
}

impl SchedulerKind {
    pub fn validate(&self) -> Result<()> {
        if let SchedulerKind::Lbtw { b } = *self {
            if !(b > 0.0 && b <= 1.0) {
                return Err(CobaError::Config(format!("lbtw exponent b must be in (0, 1], got {b}")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::Coba => "coba",
            SchedulerKind::Uniform => "uniform",
            SchedulerKind::Lbtw { .. } => "lbtw",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CobaConfig {
    pub num_tasks: usize,
    /// History window N used both for slope fitting and ACS normalization.
    pub window: usize,
    /// Warm-up W: steps `t < W` use uniform weights.
    pub warmup: usize,
    /// Number of validation mini-batches M.
    pub val_batches: usize,
    pub tau: f64,
    pub eps_den: f64,
    /// Optional bound on the divergence factor's history; `None` keeps all of it.
    pub df_history_cap: Option<usize>,
}

impl CobaConfig {
    /// Recommended settings for `num_tasks` tasks and `val_batches`
    /// validation batches: N = 2M, W = M, tau = 5.
    pub fn new(num_tasks: usize, val_batches: usize) -> Self {
        Self {
            num_tasks,
            window: 2 * val_batches,
            warmup: val_batches,
            val_batches,
            tau: DEFAULT_TAU,
            eps_den: EPS_DEN,
            df_history_cap: None,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn with_warmup(mut self, warmup: usize) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tasks < 2 {
            return Err(CobaError::Config(format!("need at least 2 tasks, got {}", self.num_tasks)));
        }
        if self.window < 2 {
            return Err(CobaError::Config(format!("window N must be at least 2, got {}", self.window)));
        }
        if self.val_batches < 1 {
            return Err(CobaError::Config("M must be at least 1".into()));
        }
        if !(self.tau.is_finite() && self.tau > 1.0) {
            return Err(CobaError::Config(format!("tau must be > 1, got {}", self.tau)));
        }
        if !(self.eps_den.is_finite() && self.eps_den > 0.0) {
            return Err(CobaError::Config(format!("eps_den must be positive, got {}", self.eps_den)));
        }
        if self.df_history_cap == Some(0) {
            return Err(CobaError::Config("df history cap must be positive".into()));
        }
        Ok(())
    }
}

/// Flat JSON form of a scheduler configuration.
///
/// `N` and `W` default to `2M` and `M`; `tau`, `b` and `eps_den` default to
/// 5, 0.5 and 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSpec {
    pub kind: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_eps")]
    pub eps_den: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df_history_cap: Option<usize>,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_b() -> f64 {
    DEFAULT_LBTW_B
}

fn default_eps() -> f64 {
    EPS_DEN
}

impl SchedulerSpec {
    pub fn from_parts(kind: SchedulerKind, config: &CobaConfig) -> Self {
        Self {
            kind: kind.name().to_string(),
            k: config.num_tasks,
            n: Some(config.window),
            w: Some(config.warmup),
            m: config.val_batches,
            tau: config.tau,
            b: match kind {
                SchedulerKind::Lbtw { b } => b,
                _ => DEFAULT_LBTW_B,
            },
            eps_den: config.eps_den,
            df_history_cap: config.df_history_cap,
        }
    }

    pub fn kind(&self) -> Result<SchedulerKind> {
        let kind = match self.kind.to_ascii_lowercase().as_str() {
            "coba" => SchedulerKind::Coba,
            "uniform" => SchedulerKind::Uniform,
            "lbtw" => SchedulerKind::Lbtw { b: self.b },
            other => return Err(CobaError::Config(format!("unknown scheduler kind {other:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn config(&self) -> Result<CobaConfig> {
        let config = CobaConfig {
            num_tasks: self.k,
            window: self.n.unwrap_or(2 * self.m),
            warmup: self.w.unwrap_or(self.m),
            val_batches: self.m,
            tau: self.tau,
            eps_den: self.eps_den,
            df_history_cap: self.df_history_cap,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn into_parts(&self) -> Result<(SchedulerKind, CobaConfig)> {
        Ok((self.kind()?, self.config()?))
    }
}

/// Everything computed at one scheduler step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub step: u64,
    pub weights: Vec<f64>,
    pub rcs: Vec<f64>,
    pub acs: Vec<f64>,
    pub df: f64,
    pub slopes: Vec<f64>,
    pub loss_ratios: Vec<f64>,
}

pub fn uniform_weights(k: usize) -> Result<ScoreVector> {
    ScoreVector::uniform(k)
}

/// LBTW weights `(loss / initial_loss)^b`, normalized to sum to one.
pub fn lbtw_weights(current: &[f64], initial: &[f64], b: f64, eps_den: f64) -> Result<ScoreVector> {
    if current.len() != initial.len() || current.is_empty() {
        return Err(CobaError::Argument(format!(
            "lbtw needs matching non-empty loss vectors, got {} and {}",
            current.len(),
            initial.len()
        )));
    }
    if !(b > 0.0 && b <= 1.0) {
        return Err(CobaError::Argument(format!("lbtw exponent b must be in (0, 1], got {b}")));
    }
    if let Some(l0) = initial.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(CobaError::data(format!("lbtw initial loss must be positive, got {l0}")));
    }
    if let Some(l) = current.iter().find(|l| !l.is_finite()) {
        return Err(CobaError::data(format!("lbtw current loss must be finite, got {l}")));
    }
    let raw: Vec<f64> = current
        .iter()
        .zip(initial)
        .map(|(l, l0)| (l / l0).max(0.0).powf(b))
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum < eps_den {
        return ScoreVector::uniform(current.len());
    }
    Ok(ScoreVector::new(raw.into_iter().map(|r| r / sum).collect()))
}

/// Stateful weight scheduler.
///
/// Call [`Scheduler::step`] once per training iteration with that
/// iteration's validation losses; the returned weights are meant for the
/// next iteration's weighted objective.
#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    config: CobaConfig,
    t: u64,
    windows: Vec<LossRatioWindow>,
    histories: Vec<SlopeHistory>,
    divergence: DivergenceState,
    initial_losses: Option<Vec<f64>>,
    weights: Vec<f64>,
    last: Option<WeightRecord>,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, config: CobaConfig) -> Result<Self> {
        config.validate()?;
        kind.validate()?;
        let k = config.num_tasks;
        let windows = (0..k)
            .map(|i| LossRatioWindow::new(i, config.window))
            .collect::<Result<Vec<_>>>()?;
        let histories = (0..k)
            .map(|i| SlopeHistory::new(i, config.window))
            .collect::<Result<Vec<_>>>()?;
        let divergence = DivergenceState::new(config.tau, config.eps_den, config.df_history_cap)?;
        Ok(Self {
            kind,
            weights: uniform_weights(k)?.into_vec(),
            config,
            t: 0,
            windows,
            histories,
            divergence,
            initial_losses: None,
            last: None,
        })
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn config(&self) -> &CobaConfig {
        &self.config
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Weights to use for the next training step.
    pub fn current_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn last_record(&self) -> Option<&WeightRecord> {
        self.last.as_ref()
    }

    pub fn windows(&self) -> &[LossRatioWindow] {
        &self.windows
    }

    pub fn divergence(&self) -> &DivergenceState {
        &self.divergence
    }

    pub fn step(&mut self, val_losses: &[f64]) -> Result<WeightRecord> {
        let k = self.config.num_tasks;
        if val_losses.len() != k {
            return Err(CobaError::Argument(format!(
                "expected {k} losses, got {}",
                val_losses.len()
            )));
        }
        if let Some((i, l)) = val_losses
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l >= 0.0))
        {
            return Err(CobaError::data(format!(
                "step {}: task {i} loss {l} is not a finite non-negative number",
                self.t
            )));
        }

        let step = self.t;
        let mut loss_ratios = Vec::with_capacity(k);
        let mut slopes = Vec::with_capacity(k);
        let mut solvable = true;
        for (window, &loss) in self.windows.iter_mut().zip(val_losses) {
            loss_ratios.push(window.push_loss(step, loss)?);
            let fit = window.fit_slope();
            solvable &= fit.is_solvable();
            slopes.push(fit.alpha);
        }
        let initial = self.initial_losses.get_or_insert_with(|| val_losses.to_vec());

        // Slopes only enter the ACS history and the divergence factor once
        // the fit is defined (two or more points).
        let (acs, df) = if solvable {
            for (h, &a) in self.histories.iter_mut().zip(&slopes) {
                h.push(a)?;
            }
            let alpha_max = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let df = self.divergence.step(alpha_max)?;
            (absolute_convergence_scores(&self.histories, self.config.eps_den)?, df)
        } else {
            (uniform_weights(k)?, 1.0)
        };
        let rcs = relative_convergence_scores(&slopes, self.config.eps_den)?;

        let weights = match self.kind {
            SchedulerKind::Coba if (step as usize) < self.config.warmup => uniform_weights(k)?,
            SchedulerKind::Coba => combine_weights(&rcs, &acs, df)?,
            SchedulerKind::Uniform => uniform_weights(k)?,
            SchedulerKind::Lbtw { b } => lbtw_weights(val_losses, initial, b, self.config.eps_den)?,
        };

        let record = WeightRecord {
            step,
            weights: weights.into_vec(),
            rcs: rcs.into_vec(),
            acs: acs.into_vec(),
            df,
            slopes,
            loss_ratios,
        };
        self.t += 1;
        self.weights.clone_from(&record.weights);
        self.last = Some(record.clone());
        Ok(record)
    }
}
