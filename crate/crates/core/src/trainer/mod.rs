//! Desk-scale multi-task training driven by a [`Scheduler`].
//!
//! Each iteration takes one SGD step on the weighted objective
//! `sum_i w_i * loss_i` (one training mini-batch per task), then evaluates
//! every task on validation batch `t mod M` and hands those losses to the
//! scheduler. The weights it returns are used by the next iteration.
//! Early stopping keeps the step with the lowest mean validation loss ratio.

mod data;
mod model;

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{make_suite, Batch, SuiteSpec, SyntheticSuite, TaskData};
pub use model::{forward_loss, loss_and_gradient, sgd_step, weighted_backward, Gradients, SharedTrunkModel};

use crate::error::{CobaError, Result};
use crate::replay::{write_trace_csv, WeightTrace};
use crate::scheduler::{CobaConfig, Scheduler, SchedulerKind, SchedulerSpec};

/// Default SGD learning rate.
pub const DEFAULT_LR: f64 = 1e-2;

fn default_lr() -> f64 {
    DEFAULT_LR
}

/// JSON experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: SuiteSpec,
    pub scheduler: SchedulerSpec,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub t_max: usize,
    /// Seeds model initialization and mini-batch shuffling.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CobaError::Config(format!("experiment config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CobaError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks cross-field consistency and returns the scheduler parts.
    pub fn validate(&self) -> Result<(SchedulerKind, CobaConfig)> {
        self.suite.validate()?;
        let (kind, config) = self.scheduler.into_parts()?;
        if config.num_tasks != self.suite.num_tasks {
            return Err(CobaError::Config(format!(
                "scheduler K={} but suite K={}",
                config.num_tasks, self.suite.num_tasks
            )));
        }
        if config.val_batches != self.suite.val_batches {
            return Err(CobaError::Config(format!(
                "scheduler M={} but suite M={}",
                config.val_batches, self.suite.val_batches
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(CobaError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.t_max == 0 {
            return Err(CobaError::Config("t_max must be at least 1".into()));
        }
        Ok((kind, config))
    }
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub task_names: Vec<String>,
    /// Weighted training objective per completed step.
    pub train_losses: Vec<f64>,
    /// Per-step validation loss ratios, `[step][task]`.
    pub val_ratios: Vec<Vec<f64>>,
    pub trace: WeightTrace,
    pub best_step: usize,
    pub best_mean_ratio: f64,
    /// Test loss per task for the parameters at `best_step`.
    pub test_losses: Vec<f64>,
    /// Full-validation-set loss of the final model over that of the initial model.
    pub final_val_ratios: Vec<f64>,
    pub runtime_ms: u128,
    pub diverged: Option<Divergence>,
}

/// The JSON summary written next to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_step: usize,
    pub test_losses: Vec<f64>,
    pub runtime_ms: u128,
    pub steps: usize,
    pub scheduler: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<Divergence>,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.train_losses.len()
    }

    pub fn summary(&self) -> TrainSummary {
        TrainSummary {
            best_step: self.best_step,
            test_losses: self.test_losses.clone(),
            runtime_ms: self.runtime_ms,
            steps: self.steps(),
            scheduler: self.trace.scheduler.as_ref().map_or_else(String::new, |s| s.kind.clone()),
            diverged: self.diverged.clone(),
        }
    }

    /// Writes `trace.csv` and `summary.json` into `dir`, creating it if needed.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| CobaError::io(dir, e))?;
        write_trace_csv(&self.trace, dir.join("trace.csv"))?;
        let path = dir.join("summary.json");
        let json = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        fs::write(&path, json + "\n").map_err(|e| CobaError::io(&path, e))
    }
}

/// Per-task epoch shuffler over training row indices.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        let mut s = Self { order: (0..n).collect(), pos: n, rng };
        s.reshuffle_if_needed(1);
        s
    }

    fn reshuffle_if_needed(&mut self, want: usize) {
        if self.pos + want > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
    }

    fn next_batch(&mut self, size: usize) -> &[usize] {
        self.reshuffle_if_needed(size);
        let start = self.pos;
        self.pos += size;
        &self.order[start..self.pos]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn full_val_losses(model: &SharedTrunkModel, suite: &SyntheticSuite) -> Result<Vec<f64>> {
    (0..suite.num_tasks())
        .map(|i| forward_loss(model, &suite.full_validation(i), i))
        .collect()
}

/// Trains a fresh model on `suite` for up to `t_max` iterations.
///
/// A non-finite loss or gradient stops the run; the report then covers the
/// completed steps and `diverged` says where it stopped.
pub fn run_experiment(
    suite: &SyntheticSuite,
    kind: SchedulerKind,
    config: &CobaConfig,
    lr: f64,
    t_max: usize,
    seed: u64,
) -> Result<TrainReport> {
    let k = suite.num_tasks();
    if config.num_tasks != k {
        return Err(CobaError::Config(format!(
            "scheduler configured for {} tasks but suite has {k}",
            config.num_tasks
        )));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(CobaError::Config(format!("lr must be positive, got {lr}")));
    }
    if t_max == 0 {
        return Err(CobaError::Config("t_max must be at least 1".into()));
    }
    let started = Instant::now();
    let spec = suite.spec();
    let mut scheduler = Scheduler::new(kind, config.clone())?;
    let mut model = SharedTrunkModel::new(spec.input_dim, spec.hidden, k, seed)?;
    let mut samplers: Vec<Sampler> = (0..k)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(if spec.identical_tasks { 1 } else { i as u64 + 1 });
            Sampler::new(spec.n_train, rng)
        })
        .collect();
    let initial_val = full_val_losses(&model, suite)?;

    let mut train_losses = Vec::with_capacity(t_max);
    let mut val_ratios = Vec::with_capacity(t_max);
    let mut records = Vec::with_capacity(t_max);
    let mut best: Option<(usize, f64, SharedTrunkModel)> = None;
    let mut diverged = None;

    for t in 0..t_max {
        let batches: Vec<Batch> = (0..k)
            .map(|i| suite.task(i).train.select(samplers[i].next_batch(spec.batch_size)))
            .collect();
        let refs: Vec<&Batch> = batches.iter().collect();
        let weights = scheduler.current_weights().to_vec();
        let step = (|| {
            let (losses, grads) = loss_and_gradient(&model, &refs, &weights)?;
            let objective: f64 = losses.iter().zip(&weights).map(|(l, w)| l * w).sum();
            if !objective.is_finite() {
                return Err(CobaError::data(format!("training loss is {objective}")));
            }
            sgd_step(&mut model, &grads, lr)?;
            let val: Vec<f64> = (0..k)
                .map(|i| forward_loss(&model, suite.val_batch(i, t), i))
                .collect::<Result<_>>()?;
            if let Some(l) = val.iter().find(|l| !l.is_finite()) {
                return Err(CobaError::data(format!("validation loss is {l}")));
            }
            Ok((objective, scheduler.step(&val)?))
        })();
        let (objective, record) = match step {
            Ok(v) => v,
            Err(e @ CobaError::Data { .. }) => {
                diverged = Some(Divergence { step: t, message: e.to_string() });
                break;
            }
            Err(e) => return Err(e),
        };
        let score = mean(&record.loss_ratios);
        if best.as_ref().is_none_or(|(_, s, _)| score < *s) {
            best = Some((t, score, model.clone()));
        }
        train_losses.push(objective);
        val_ratios.push(record.loss_ratios.clone());
        records.push(record);
    }

    let final_val = full_val_losses(&model, suite)?;
    let final_val_ratios = final_val.iter().zip(&initial_val).map(|(f, i)| f / i).collect();
    let (best_step, best_mean_ratio, test_losses) = match &best {
        Some((step, score, m)) => (
            *step,
            *score,
            (0..k).map(|i| forward_loss(m, &suite.task(i).test, i)).collect::<Result<_>>()?,
        ),
        None => (0, f64::NAN, vec![f64::NAN; k]),
    };
    let task_names: Vec<String> = (0..k).map(|i| format!("task{i}")).collect();
    let steps = (0..records.len() as u64).collect();
    Ok(TrainReport {
        trace: WeightTrace {
            task_names: task_names.clone(),
            steps,
            records,
            scheduler: Some(SchedulerSpec::from_parts(kind, config)),
        },
        task_names,
        train_losses,
        val_ratios,
        best_step,
        best_mean_ratio,
        test_losses,
        final_val_ratios,
        runtime_ms: started.elapsed().as_millis(),
        diverged,
    })
}

/// Builds the suite from `cfg` and runs it.
pub fn run_config(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let (kind, config) = cfg.validate()?;
    let suite = make_suite(&cfg.suite)?;
    run_experiment(&suite, kind, &config, cfg.lr, cfg.t_max, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_suite(noise: Vec<f64>) -> SyntheticSuite {
        make_suite(&SuiteSpec::new(4, 6, 200, 4, noise, 3)).unwrap()
    }

    #[test]
    fn runs_and_picks_earliest_best() {
        let suite = small_suite(vec![0.05, 0.2]);
        let cfg = CobaConfig::new(2, 4);
        let r = run_experiment(&suite, SchedulerKind::Coba, &cfg, 0.05, 200, 1).unwrap();
        assert_eq!(r.steps(), 200);
        assert!(r.diverged.is_none());
        let means: Vec<f64> = r.val_ratios.iter().map(|v| mean(v)).collect();
        let min = means.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(means[r.best_step], min);
        assert!(means[..r.best_step].iter().all(|m| *m > min));
        assert_eq!(r.best_mean_ratio, min);
    }

    #[test]
    fn divergence_gives_partial_report() {
        let suite = small_suite(vec![0.05, 0.2]);
        let cfg = CobaConfig::new(2, 4);
        let r = run_experiment(&suite, SchedulerKind::Uniform, &cfg, 1e6, 50, 1).unwrap();
        let d = r.diverged.as_ref().expect("huge lr must blow up");
        assert_eq!(r.steps(), d.step);
        assert!(r.steps() < 50);
    }

    #[test]
    fn rejects_bad_arguments() {
        let suite = small_suite(vec![0.05, 0.2]);
        let cfg = CobaConfig::new(2, 4);
        assert!(run_experiment(&suite, SchedulerKind::Uniform, &cfg, 0.1, 0, 1).is_err());
        assert!(run_experiment(&suite, SchedulerKind::Uniform, &cfg, -0.1, 10, 1).is_err());
        let cfg3 = CobaConfig::new(3, 4);
        assert!(run_experiment(&suite, SchedulerKind::Uniform, &cfg3, 0.1, 10, 1).is_err());
    }

    #[test]
    fn config_json() {
        let text = r#"{
            "suite": {"K": 2, "d": 3, "h": 4, "n_train": 60, "M": 4, "noise": [0.1, 0.2], "seed": 5},
            "scheduler": {"kind": "coba", "K": 2, "M": 4},
            "t_max": 10,
            "seed": 1
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.lr, DEFAULT_LR);
        let (kind, c) = cfg.validate().unwrap();
        assert_eq!((kind, c.window, c.warmup), (SchedulerKind::Coba, 8, 4));
        assert!(ExperimentConfig::from_json("{").is_err());
        let zero = ExperimentConfig { t_max: 0, ..cfg.clone() };
        assert!(zero.validate().is_err());
        let mut mismatch = cfg.clone();
        mismatch.scheduler.m = 5;
        assert!(mismatch.validate().is_err());
    }

    #[test]
    fn writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let suite = small_suite(vec![0.05, 0.2]);
        let r = run_experiment(&suite, SchedulerKind::Uniform, &CobaConfig::new(2, 4), 0.05, 20, 1).unwrap();
        r.write_outputs(dir.path().join("out")).unwrap();
        let trace = crate::replay::read_trace_csv(dir.path().join("out/trace.csv")).unwrap();
        assert_eq!(trace.len(), 20);
        let summary: TrainSummary =
            serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
        assert_eq!(summary.best_step, r.best_step);
        assert_eq!(summary.test_losses.len(), 2);
    }
}
