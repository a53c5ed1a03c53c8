//! Per-step scheduler timing.

use std::time::Instant;

use crate::error::{CobaError, Result};
use crate::replay::synthetic::{sample_curves, Curve, Noise};
use crate::replay::LossTrajectory;
use crate::scheduler::{CobaConfig, Scheduler, SchedulerKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub num_tasks: usize,
    pub steps: usize,
    pub ns_per_step: f64,
    /// Wall time of the fastest repetition, in seconds.
    pub total_secs: f64,
}

/// `K` noisy decaying loss curves with staggered rates.
pub fn bench_stream(num_tasks: usize, steps: usize, seed: u64) -> Result<LossTrajectory> {
    let names: Vec<String> = (0..num_tasks).map(|i| format!("t{i}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let curves: Vec<Curve> = (0..num_tasks)
        .map(|i| Curve::decay(1.0, 1e-3 * (1.0 + i as f64 / num_tasks as f64), 0.1))
        .collect();
    sample_curves(&names, &curves, steps, Some(Noise { rel_sigma: 1e-3, seed }))
}

/// Times `steps` CoBa steps with window `window` over `num_tasks` tasks.
///
/// The stream is generated before timing starts. The fastest of `reps`
/// repetitions is reported.
pub fn time_scheduler(num_tasks: usize, window: usize, steps: usize, reps: usize) -> Result<BenchRow> {
    if steps == 0 || reps == 0 {
        return Err(CobaError::Argument("bench needs at least one step and one repetition".into()));
    }
    let stream = bench_stream(num_tasks, steps, 7)?;
    let config = CobaConfig::new(num_tasks, window.div_ceil(2).max(1)).with_window(window);
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let mut s = Scheduler::new(SchedulerKind::Coba, config.clone())?;
        let start = Instant::now();
        for row in stream.rows() {
            std::hint::black_box(s.step(row)?);
        }
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(BenchRow {
        num_tasks,
        steps,
        ns_per_step: best * 1e9 / steps as f64,
        total_secs: best,
    })
}

/// Ratio of the cost at the largest `K` to the straight line through the
/// two smallest `K`. Needs at least three distinct task counts.
pub fn linearity_ratio(rows: &[BenchRow]) -> Option<f64> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.num_tasks);
    sorted.dedup_by_key(|r| r.num_tasks);
    if sorted.len() < 3 {
        return None;
    }
    let (a, b, last) = (sorted[0], sorted[1], sorted[sorted.len() - 1]);
    let slope = (b.ns_per_step - a.ns_per_step) / (b.num_tasks - a.num_tasks) as f64;
    let predicted = a.ns_per_step + slope * (last.num_tasks - a.num_tasks) as f64;
    Some(last.ns_per_step / predicted)
}
