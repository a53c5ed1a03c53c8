//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 failure while
//! running (training divergence, unwritable output, failed bench bound).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{linearity_ratio, time_scheduler};
use crate::error::{CobaError, Result};
use crate::replay::{load_trajectory_csv, run_replay, write_trace_csv};
use crate::scheduler::{CobaConfig, SchedulerKind, DEFAULT_LBTW_B};
use crate::scores::DEFAULT_TAU;
use crate::trainer::{make_suite, run_experiment, ExperimentConfig};
use crate::selftest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Default number of validation batches for replay when `--m` is not given.
pub const DEFAULT_REPLAY_M: usize = 10;

/// Largest allowed bench cost at the biggest K relative to the linear fit.
pub const LINEARITY_BOUND: f64 = 2.0;

#[derive(Debug, Parser)]
#[command(name = "coba", version, about = "Convergence-balancing loss weights for multi-task training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay a CSV of per-task validation losses through a scheduler.
    Replay(ReplayArgs),
    /// Train the synthetic shared-trunk model from a JSON experiment config.
    Train(TrainArgs),
    /// Time scheduler steps for several task counts.
    Bench(BenchArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Coba,
    Uniform,
    Lbtw,
}

/// Scheduler overrides shared by `replay` and `train`.
#[derive(Debug, Args)]
pub struct SchedulerArgs {
    /// Weighting scheme.
    #[arg(long, value_enum)]
    pub scheduler: Option<KindArg>,
    /// History window N (default 2M).
    #[arg(long)]
    pub n: Option<usize>,
    /// Warm-up steps W (default M).
    #[arg(long)]
    pub w: Option<usize>,
    /// Number of validation batches M.
    #[arg(long)]
    pub m: Option<usize>,
    /// Divergence factor temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// LBTW exponent.
    #[arg(long)]
    pub b: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Loss CSV with header `step,loss_<name>,...`.
    #[arg(long)]
    pub input: PathBuf,
    /// Trace CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub sched: SchedulerArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for trace.csv and summary.json.
    #[arg(long)]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub sched: SchedulerArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated task counts.
    #[arg(long, value_delimiter = ',', default_value = "2,8,32,64")]
    pub k: Vec<usize>,
    /// History window N.
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Steps timed per task count.
    #[arg(long, default_value_t = 10_000)]
    pub t: usize,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Replay(a) => cmd_replay(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Selftest => cmd_selftest(),
    }
}

fn fail(e: &CobaError, code: i32) -> i32 {
    eprintln!("error: {e}");
    code
}

fn kind_from(arg: KindArg, b: f64) -> SchedulerKind {
    match arg {
        KindArg::Coba => SchedulerKind::Coba,
        KindArg::Uniform => SchedulerKind::Uniform,
        KindArg::Lbtw => SchedulerKind::Lbtw { b },
    }
}

fn fmt_weights(w: &[f64]) -> String {
    let parts: Vec<String> = w.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn replay_setup(a: &ReplayArgs) -> Result<(crate::replay::LossTrajectory, SchedulerKind, CobaConfig)> {
    let traj = load_trajectory_csv(&a.input)?;
    let s = &a.sched;
    let m = s.m.unwrap_or(DEFAULT_REPLAY_M);
    let mut config = CobaConfig::new(traj.num_tasks(), m);
    if let Some(n) = s.n {
        config.window = n;
    }
    if let Some(w) = s.w {
        config.warmup = w;
    }
    config.tau = s.tau.unwrap_or(DEFAULT_TAU);
    let kind = kind_from(s.scheduler.unwrap_or(KindArg::Coba), s.b.unwrap_or(DEFAULT_LBTW_B));
    kind.validate()?;
    config.validate()?;
    Ok((traj, kind, config))
}

pub fn cmd_replay(a: &ReplayArgs) -> i32 {
    // Anything that goes wrong before the replay starts is an input problem.
    let (traj, kind, config) = match replay_setup(a) {
        Ok(v) => v,
        Err(e) => return fail(&e, EXIT_USAGE),
    };
    let trace = match run_replay(&traj, kind, &config) {
        Ok(t) => t,
        Err(e) => return fail(&e, e.exit_code()),
    };
    if let Err(e) = write_trace_csv(&trace, &a.output) {
        return fail(&e, EXIT_RUNTIME);
    }
    let last = trace.last().map(|r| fmt_weights(&r.weights)).unwrap_or_else(|| "[]".into());
    println!(
        "replay: T={} K={} scheduler={} final_w={last} -> {}",
        trace.len(),
        traj.num_tasks(),
        kind.name(),
        a.output.display()
    );
    EXIT_OK
}

fn train_setup(a: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&a.config).map_err(|e| match e {
        CobaError::Io { path, source } => CobaError::Config(format!("{}: {source}", path.display())),
        other => other,
    })?;
    let s = &a.sched;
    if let Some(k) = s.scheduler {
        cfg.scheduler.kind = format!("{k:?}").to_ascii_lowercase();
    }
    if s.n.is_some() {
        cfg.scheduler.n = s.n;
    }
    if s.w.is_some() {
        cfg.scheduler.w = s.w;
    }
    if let Some(m) = s.m {
        cfg.scheduler.m = m;
        cfg.suite.val_batches = m;
    }
    if let Some(tau) = s.tau {
        cfg.scheduler.tau = tau;
    }
    if let Some(b) = s.b {
        cfg.scheduler.b = b;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(t) = a.t_max {
        cfg.t_max = t;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> i32 {
    let cfg = match train_setup(a) {
        Ok(c) => c,
        Err(e) => return fail(&e, EXIT_USAGE),
    };
    let run = cfg.validate().and_then(|(kind, config)| {
        let suite = make_suite(&cfg.suite)?;
        run_experiment(&suite, kind, &config, cfg.lr, cfg.t_max, cfg.seed)
    });
    let report = match run {
        Ok(r) => r,
        Err(e) => return fail(&e, e.exit_code()),
    };
    if let Err(e) = report.write_outputs(&a.output_dir) {
        return fail(&e, EXIT_RUNTIME);
    }
    if let Some(d) = &report.diverged {
        let e = CobaError::Diverged { step: d.step, msg: d.message.clone() };
        return fail(&e, EXIT_RUNTIME);
    }
    println!(
        "train: steps={} best_step={} test_losses={} runtime_ms={} -> {}",
        report.steps(),
        report.best_step,
        fmt_weights(&report.test_losses),
        report.runtime_ms,
        a.output_dir.display()
    );
    EXIT_OK
}

pub fn cmd_bench(a: &BenchArgs) -> i32 {
    if a.k.is_empty() {
        return fail(&CobaError::Argument("--k needs at least one task count".into()), EXIT_USAGE);
    }
    if a.t == 0 || a.n < 2 || a.k.iter().any(|k| *k < 2) {
        return fail(
            &CobaError::Argument("bench needs T >= 1, N >= 2 and every K >= 2".into()),
            EXIT_USAGE,
        );
    }
    println!("{:>6} {:>14}", "K", "ns/step");
    let mut rows = Vec::with_capacity(a.k.len());
    for &k in &a.k {
        match time_scheduler(k, a.n, a.t, 3) {
            Ok(r) => {
                println!("{:>6} {:>14.1}", r.num_tasks, r.ns_per_step);
                rows.push(r);
            }
            Err(e) => return fail(&e, EXIT_RUNTIME),
        }
    }
    match linearity_ratio(&rows) {
        Some(ratio) => {
            let ok = ratio <= LINEARITY_BOUND;
            println!(
                "linearity ratio: {ratio:.3} (bound {LINEARITY_BOUND}) {}",
                if ok { "PASS" } else { "FAIL" }
            );
            if ok {
                EXIT_OK
            } else {
                EXIT_RUNTIME
            }
        }
        None => {
            println!("linearity ratio: n/a (needs three task counts)");
            EXIT_OK
        }
    }
}

pub fn cmd_selftest() -> i32 {
    let report = selftest::run();
    for c in &report.checks {
        println!("{c}");
    }
    let passed = report.checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} checks passed", report.checks.len());
    report.exit_code()
}
