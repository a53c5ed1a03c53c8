//! Convergence-balancing loss weights for multi-task training.
//!
//! The scheduler watches one validation mini-batch loss per task per step,
//! fits a sliding-window slope to each task's loss ratio and turns those
//! slopes into task weights:
//!
//! ```text
//! w(t) = DF(t) * RCS(t) + (1 - DF(t)) * ACS(t)
//! ```
//!
//! Slowly converging tasks are up-weighted while every task is converging
//! (RCS). Once some task starts to diverge the divergence factor drops and
//! ACS takes over, pushing weight away from the diverging task.
//!
//! Besides the scheduler itself the crate provides CSV trajectory replay,
//! uniform and LBTW baselines, and a small shared-trunk regression trainer
//! for end-to-end experiments.

pub mod bench;
pub mod cli;
pub mod error;
pub mod replay;
pub mod scheduler;
pub mod scores;
pub mod selftest;
pub mod slope;
pub mod trainer;

pub use error::{CobaError, Result};
pub use scheduler::{CobaConfig, Scheduler, SchedulerKind, SchedulerSpec, WeightRecord};
pub use scores::ScoreVector;
