//! Offline replay of recorded loss trajectories.
//!
//! Input files are wide CSV with one loss column per task:
//!
//! ```text
//! step,loss_<name1>,...,loss_<nameK>
//! ```
//!
//! The emitted trace has one row per input step with the divergence factor
//! followed by five columns per task (weight, RCS, ACS, slope, loss ratio).

pub mod synthetic;

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{CobaError, Result};
use crate::scheduler::{CobaConfig, Scheduler, SchedulerKind, SchedulerSpec, WeightRecord};

const LOSS_PREFIX: &str = "loss_";
const TRACE_FIELDS: [&str; 5] = ["w", "rcs", "acs", "alpha", "ratio"];

/// A rectangular table of per-step, per-task losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrajectory {
    task_names: Vec<String>,
    steps: Vec<u64>,
    losses: Vec<Vec<f64>>,
}

impl LossTrajectory {
    /// Builds a trajectory, checking the same invariants as the CSV loader.
    /// `losses[t][i]` is task `i` at row `t`.
    pub fn new(task_names: Vec<String>, steps: Vec<u64>, losses: Vec<Vec<f64>>) -> Result<Self> {
        if task_names.is_empty() {
            return Err(CobaError::Argument("trajectory needs at least one task".into()));
        }
        if steps.is_empty() {
            return Err(CobaError::Argument("trajectory needs at least one step".into()));
        }
        if steps.len() != losses.len() {
            return Err(CobaError::Argument(format!(
                "{} steps but {} loss rows",
                steps.len(),
                losses.len()
            )));
        }
        if let Some(row) = steps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(CobaError::Ordering {
                row: Some(row + 1),
                msg: format!("step {} does not follow {}", steps[row + 1], steps[row]),
            });
        }
        for (row, l) in losses.iter().enumerate() {
            if l.len() != task_names.len() {
                return Err(CobaError::Format {
                    row: Some(row),
                    msg: format!("expected {} losses, found {}", task_names.len(), l.len()),
                });
            }
            check_losses(l, row)?;
        }
        Ok(Self { task_names, steps, losses })
    }

    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    pub fn num_tasks(&self) -> usize {
        self.task_names.len()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.losses
    }

    /// The loss column of one task.
    pub fn column(&self, task: usize) -> Vec<f64> {
        self.losses.iter().map(|row| row[task]).collect()
    }
}

fn check_losses(losses: &[f64], row: usize) -> Result<()> {
    match losses.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        Some(l) => Err(CobaError::Data {
            row: Some(row),
            msg: format!("loss {l} is not a positive finite number"),
        }),
        None => Ok(()),
    }
}

/// Reads a wide loss CSV. Row numbers in errors are file line numbers.
pub fn load_trajectory_csv(path: impl AsRef<Path>) -> Result<LossTrajectory> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CobaError::io(path, e))?;
    read_trajectory(file)
}

pub fn read_trajectory(input: impl std::io::Read) -> Result<LossTrajectory> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(1, e))?,
        None => return Err(CobaError::format_at(1, "missing header")),
    };
    if header.get(0) != Some("step") {
        return Err(CobaError::format_at(1, "missing header: first column must be `step`"));
    }
    let task_names = header
        .iter()
        .skip(1)
        .map(|col| match col.strip_prefix(LOSS_PREFIX) {
            Some(name) if !name.is_empty() => Ok(name.to_string()),
            _ => Err(CobaError::format_at(1, format!("column {col:?} is not of the form loss_<name>"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if task_names.is_empty() {
        return Err(CobaError::format_at(1, "header has no loss columns"));
    }

    let mut steps: Vec<u64> = Vec::new();
    let mut losses = Vec::new();
    for (idx, rec) in records.enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| csv_error(line, e))?;
        if rec.len() != task_names.len() + 1 {
            return Err(CobaError::format_at(
                line,
                format!("expected {} fields, found {}", task_names.len() + 1, rec.len()),
            ));
        }
        if let Some(col) = rec.iter().position(str::is_empty) {
            return Err(CobaError::format_at(line, format!("empty cell in column {}", col + 1)));
        }
        let step: u64 = rec[0]
            .parse()
            .map_err(|_| CobaError::format_at(line, format!("step {:?} is not a non-negative integer", &rec[0])))?;
        if let Some(&prev) = steps.last() {
            if step <= prev {
                return Err(CobaError::Ordering {
                    row: Some(line),
                    msg: format!("step {step} does not follow {prev}"),
                });
            }
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|cell| {
                cell.parse::<f64>()
                    .map_err(|_| CobaError::format_at(line, format!("loss {cell:?} is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        check_losses(&row, line)?;
        steps.push(step);
        losses.push(row);
    }
    if steps.is_empty() {
        return Err(CobaError::format_at(2, "no data rows"));
    }
    Ok(LossTrajectory { task_names, steps, losses })
}

fn csv_error(line: usize, e: csv::Error) -> CobaError {
    CobaError::format_at(line, e.to_string())
}

/// The weight records produced by a replay, one per trajectory row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTrace {
    pub task_names: Vec<String>,
    /// Step labels from the source trajectory.
    pub steps: Vec<u64>,
    pub records: Vec<WeightRecord>,
    /// Configuration that produced the trace, when known.
    pub scheduler: Option<SchedulerSpec>,
}

impl WeightTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&WeightRecord> {
        self.records.last()
    }

    /// One task's weight over time.
    pub fn weight_series(&self, task: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.weights[task]).collect()
    }
}

/// Feeds every trajectory row through a fresh scheduler.
pub fn run_replay(traj: &LossTrajectory, kind: SchedulerKind, config: &CobaConfig) -> Result<WeightTrace> {
    if config.num_tasks != traj.num_tasks() {
        return Err(CobaError::Config(format!(
            "scheduler configured for {} tasks but trajectory has {}",
            config.num_tasks,
            traj.num_tasks()
        )));
    }
    let mut scheduler = Scheduler::new(kind, config.clone())?;
    let records = traj
        .rows()
        .iter()
        .map(|row| scheduler.step(row))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightTrace {
        task_names: traj.task_names().to_vec(),
        steps: traj.steps().to_vec(),
        records,
        scheduler: Some(SchedulerSpec::from_parts(kind, config)),
    })
}

fn trace_header(names: &[String]) -> Vec<String> {
    let mut cols = vec!["step".to_string(), "df".to_string()];
    for name in names {
        cols.extend(TRACE_FIELDS.iter().map(|f| format!("{f}_{name}")));
    }
    cols
}

// 17 significant digits: enough to round-trip any f64.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trace(trace: &WeightTrace, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => CobaError::io("<trace>", io),
        other => CobaError::Argument(format!("{other:?}")),
    };
    w.write_record(trace_header(&trace.task_names)).map_err(map)?;
    for (step, rec) in trace.steps.iter().zip(&trace.records) {
        let mut row = vec![step.to_string(), fmt_float(rec.df)];
        for i in 0..trace.task_names.len() {
            row.extend(
                [rec.weights[i], rec.rcs[i], rec.acs[i], rec.slopes[i], rec.loss_ratios[i]]
                    .into_iter()
                    .map(fmt_float),
            );
        }
        w.write_record(&row).map_err(map)?;
    }
    w.flush().map_err(|e| CobaError::io("<trace>", e))
}

pub fn write_trace_csv(trace: &WeightTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CobaError::io(path, e))?;
    write_trace(trace, std::io::BufWriter::new(file)).map_err(|e| match e {
        CobaError::Io { source, .. } => CobaError::io(path, source),
        other => other,
    })
}

/// Parses a trace written by [`write_trace_csv`].
pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<WeightTrace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CobaError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(1, e))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols[0] != "step" || cols[1] != "df" || (cols.len() - 2) % TRACE_FIELDS.len() != 0 {
        return Err(CobaError::format_at(1, "not a weight trace header"));
    }
    let mut task_names = Vec::new();
    for chunk in cols[2..].chunks(TRACE_FIELDS.len()) {
        let name = chunk[0]
            .strip_prefix("w_")
            .ok_or_else(|| CobaError::format_at(1, format!("unexpected column {:?}", chunk[0])))?;
        for (col, field) in chunk.iter().zip(TRACE_FIELDS) {
            if *col != format!("{field}_{name}") {
                return Err(CobaError::format_at(1, format!("unexpected column {col:?}")));
            }
        }
        task_names.push(name.to_string());
    }

    let k = task_names.len();
    let mut steps = Vec::new();
    let mut records = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| csv_error(line, e))?;
        let step: u64 = rec[0].parse().map_err(|_| CobaError::format_at(line, "bad step"))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>().map_err(|_| CobaError::format_at(line, format!("bad number {c:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        let pick = |field: usize| (0..k).map(|i| vals[1 + i * TRACE_FIELDS.len() + field]).collect::<Vec<_>>();
        records.push(WeightRecord {
            step: records.len() as u64,
            df: vals[0],
            weights: pick(0),
            rcs: pick(1),
            acs: pick(2),
            slopes: pick(3),
            loss_ratios: pick(4),
        });
        steps.push(step);
    }
    Ok(WeightTrace { task_names, steps, records, scheduler: None })
}

/// Rescales a series to `[0, 1]`; a constant series maps to zeros.
pub fn minmax_normalize(series: &[f64]) -> Vec<f64> {
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.0; series.len()];
    }
    series.iter().map(|x| ((x - min) / range).clamp(0.0, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<LossTrajectory> {
        read_trajectory(text.as_bytes())
    }

    #[test]
    fn loads_two_task_csv() {
        let t = parse("step,loss_a,loss_b\n0,1.0,2.0\n1,0.9,1.5\n").unwrap();
        assert_eq!(t.task_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(t.len(), 2);
        assert_eq!(t.rows()[1], vec![0.9, 1.5]);
    }

    #[test]
    fn format_errors_name_the_row() {
        let err = parse("step,loss_a,loss_b\n0,1.0,2.0\n1,,1.5\n").unwrap_err();
        assert!(matches!(err, CobaError::Format { row: Some(3), .. }), "{err}");
        assert!(err.to_string().contains("row 3"));

        let err = parse("step,loss_a,loss_b\n0,1.0,2.0\n1,1.5\n").unwrap_err();
        assert!(matches!(err, CobaError::Format { row: Some(3), .. }));

        assert!(matches!(parse(""), Err(CobaError::Format { .. })));
        assert!(matches!(parse("0,1.0,2.0\n"), Err(CobaError::Format { row: Some(1), .. })));
        assert!(matches!(parse("step,a,b\n0,1,2\n"), Err(CobaError::Format { .. })));
        assert!(matches!(parse("step,loss_a\n"), Err(CobaError::Format { .. })));
        assert!(matches!(parse("step,loss_a\n-1,1.0\n"), Err(CobaError::Format { .. })));
    }

    #[test]
    fn step_order_and_loss_values_are_checked() {
        let err = parse("step,loss_a\n0,1.0\n2,1.0\n2,1.0\n").unwrap_err();
        assert!(matches!(err, CobaError::Ordering { row: Some(4), .. }));
        let err = parse("step,loss_a\n0,1.0\n1,0\n").unwrap_err();
        assert!(matches!(err, CobaError::Data { row: Some(3), .. }));
        let err = parse("step,loss_a\n0,NaN\n").unwrap_err();
        assert!(matches!(err, CobaError::Data { row: Some(2), .. }));
    }

    #[test]
    fn replay_rejects_task_mismatch() {
        let t = parse("step,loss_a,loss_b\n0,1.0,2.0\n").unwrap();
        let cfg = CobaConfig::new(3, 2);
        assert!(matches!(run_replay(&t, SchedulerKind::Coba, &cfg), Err(CobaError::Config(_))));
    }

    #[test]
    fn replay_inside_warmup_is_uniform() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0 / (1.0 + i as f64), 2.0]).collect();
        let t = LossTrajectory::new(vec!["a".into(), "b".into()], (0..5).collect(), rows).unwrap();
        let cfg = CobaConfig::new(2, 5).with_warmup(10);
        let trace = run_replay(&t, SchedulerKind::Coba, &cfg).unwrap();
        assert_eq!(trace.len(), 5);
        assert!(trace.records.iter().all(|r| r.weights == vec![0.5, 0.5]));
    }

    #[test]
    fn trace_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![1.0 - 0.1 * i as f64, 2.0]).collect();
        let t = LossTrajectory::new(vec!["x".into(), "y".into()], vec![0, 10, 20], rows).unwrap();
        let trace = run_replay(&t, SchedulerKind::Coba, &CobaConfig::new(2, 1)).unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&trace, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "step,df,w_x,rcs_x,acs_x,alpha_x,ratio_x,w_y,rcs_y,acs_y,alpha_y,ratio_y"
        );
        assert!(lines[3].starts_with("20,"));

        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back.steps, trace.steps);
        assert_eq!(back.records, trace.records);

        let empty = WeightTrace { records: vec![], steps: vec![], ..trace };
        write_trace_csv(&empty, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    }

    #[test]
    fn write_to_missing_dir_reports_path() {
        let trace = WeightTrace { task_names: vec!["a".into()], steps: vec![], records: vec![], scheduler: None };
        let err = write_trace_csv(&trace, "/nonexistent/dir/trace.csv").unwrap_err();
        assert!(matches!(err, CobaError::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/dir/trace.csv"));
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[5.0, 5.0, 5.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(minmax_normalize(&[1.0, 0.0]), vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn minmax_is_bounded_and_monotone(xs in proptest::collection::vec(-1e6f64..1e6, 1..50)) {
            let ys = minmax_normalize(&xs);
            prop_assert!(ys.iter().all(|y| (0.0..=1.0).contains(y)));
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    if xs[i] < xs[j] {
                        prop_assert!(ys[i] <= ys[j]);
                    }
                }
            }
        }

        #[test]
        fn trace_round_trip(rows in proptest::collection::vec(proptest::collection::vec(0.01f64..5.0, 3), 1..40)) {
            let n = rows.len() as u64;
            let t = LossTrajectory::new(vec!["a".into(), "b".into(), "c".into()], (0..n).collect(), rows).unwrap();
            let trace = run_replay(&t, SchedulerKind::Coba, &CobaConfig::new(3, 2)).unwrap();
            let file = tempfile::NamedTempFile::new().unwrap();
            write_trace_csv(&trace, file.path()).unwrap();
            let back = read_trace_csv(file.path()).unwrap();
            prop_assert_eq!(back.records, trace.records);
        }
    }
}
