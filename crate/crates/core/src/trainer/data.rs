//! Synthetic multi-task regression data.
//!
//! Every task regresses `y = u_i . tanh(A x) + noise_i` on Gaussian inputs.
//! The teacher trunk `A` is shared, the readout `u_i` and noise level are per
//! task, so tasks share structure but reach different loss floors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CobaError, Result};

/// Rows of inputs (row-major) and scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Batch {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            if !x.is_empty() {
                return Err(CobaError::Argument("inputs without targets".into()));
            }
        } else if x.len() % y.len() != 0 {
            return Err(CobaError::Argument(format!(
                "{} input values do not split into {} rows",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        if self.y.is_empty() {
            0
        } else {
            self.x.len() / self.y.len()
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        let d = self.input_dim().max(1);
        self.x.chunks(d).zip(self.y.iter().copied())
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let d = self.input_dim();
        let mut x = Vec::with_capacity(indices.len() * d);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(&self.x[i * d..(i + 1) * d]);
            y.push(self.y[i]);
        }
        Batch { x, y }
    }
}

fn default_val_batch_size() -> usize {
    16
}

fn default_n_test() -> usize {
    256
}

fn default_batch_size() -> usize {
    16
}

/// Construction parameters of a [`SyntheticSuite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    #[serde(rename = "K")]
    pub num_tasks: usize,
    #[serde(rename = "d")]
    pub input_dim: usize,
    /// Hidden width of both the teacher and the trained trunk.
    #[serde(rename = "h")]
    pub hidden: usize,
    pub n_train: usize,
    /// Number of validation mini-batches.
    #[serde(rename = "M")]
    pub val_batches: usize,
    /// Target noise standard deviation per task.
    pub noise: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_val_batch_size")]
    pub val_batch_size: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Training mini-batch size drawn per task per step.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Give every task the same readout, noise draws and data.
    #[serde(default)]
    pub identical_tasks: bool,
}

impl SuiteSpec {
    /// Defaults for everything except the required sizes, noise and seed.
    pub fn new(input_dim: usize, hidden: usize, n_train: usize, val_batches: usize, noise: Vec<f64>, seed: u64) -> Self {
        Self {
            num_tasks: noise.len(),
            input_dim,
            hidden,
            n_train,
            val_batches,
            noise,
            seed,
            val_batch_size: default_val_batch_size(),
            n_test: default_n_test(),
            batch_size: default_batch_size(),
            identical_tasks: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CobaError::Config(msg));
        if self.num_tasks < 2 {
            return bad(format!("suite needs at least 2 tasks, got {}", self.num_tasks));
        }
        if self.noise.len() != self.num_tasks {
            return bad(format!("{} noise levels for {} tasks", self.noise.len(), self.num_tasks));
        }
        if let Some(s) = self.noise.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return bad(format!("noise level {s} must be finite and non-negative"));
        }
        if self.identical_tasks && self.noise.windows(2).any(|w| w[0] != w[1]) {
            return bad("identical tasks need equal noise levels".into());
        }
        if self.input_dim == 0 || self.hidden == 0 {
            return bad(format!("d and h must be positive, got d={} h={}", self.input_dim, self.hidden));
        }
        if self.val_batches < 1 {
            return bad("M must be at least 1".into());
        }
        if self.n_train < 10 * self.input_dim {
            return bad(format!(
                "n_train must be at least 10*d = {}, got {}",
                10 * self.input_dim,
                self.n_train
            ));
        }
        if self.val_batch_size == 0 || self.n_test == 0 {
            return bad("validation batch size and test size must be positive".into());
        }
        if self.batch_size == 0 || self.batch_size > self.n_train {
            return bad(format!("batch size must be in 1..={}, got {}", self.n_train, self.batch_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub noise: f64,
    pub train: Batch,
    pub val: Vec<Batch>,
    pub test: Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    spec: SuiteSpec,
    tasks: Vec<TaskData>,
}

impl SyntheticSuite {
    pub fn spec(&self) -> &SuiteSpec {
        &self.spec
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }

    pub fn task(&self, i: usize) -> &TaskData {
        &self.tasks[i]
    }

    /// The validation mini-batch used at step `t`: batch `t mod M`.
    pub fn val_batch(&self, task: usize, t: usize) -> &Batch {
        let val = &self.tasks[task].val;
        &val[t % val.len()]
    }

    /// The whole validation set of one task as a single batch.
    pub fn full_validation(&self, task: usize) -> Batch {
        let val = &self.tasks[task].val;
        Batch {
            x: val.iter().flat_map(|b| b.x.iter().copied()).collect(),
            y: val.iter().flat_map(|b| b.y.iter().copied()).collect(),
        }
    }
}

struct Teacher {
    d: usize,
    a: Vec<f64>,
}

impl Teacher {
    fn features(&self, x: &[f64], out: &mut [f64]) {
        for (j, f) in out.iter_mut().enumerate() {
            let row = &self.a[j * self.d..(j + 1) * self.d];
            *f = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>().tanh();
        }
    }
}

fn draw(
    teacher: &Teacher,
    readout: &[f64],
    sigma: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Batch {
    let d = teacher.d;
    let mut feat = vec![0.0; readout.len()];
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        teacher.features(&row, &mut feat);
        let clean: f64 = readout.iter().zip(&feat).map(|(u, f)| u * f).sum();
        let eps: f64 = StandardNormal.sample(rng);
        y.push(clean + sigma * eps);
        x.extend(row);
    }
    Batch { x, y }
}

/// Builds the suite described by `spec`. Deterministic in `spec.seed`.
///
/// Train, validation and test rows are separate draws from the task's
/// generator, so the splits never share a row.
pub fn make_suite(spec: &SuiteSpec) -> Result<SyntheticSuite> {
    spec.validate()?;
    let (d, h) = (spec.input_dim, spec.hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let trunk = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive sigma");
    let teacher = Teacher { d, a: (0..h * d).map(|_| trunk.sample(&mut rng)).collect() };
    let readout_dist = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("positive sigma");

    let tasks = (0..spec.num_tasks)
        .map(|i| {
            let stream = if spec.identical_tasks { 1 } else { i as u64 + 1 };
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(stream);
            let readout: Vec<f64> = (0..h).map(|_| readout_dist.sample(&mut rng)).collect();
            let sigma = spec.noise[i];
            let train = draw(&teacher, &readout, sigma, spec.n_train, &mut rng);
            let val = (0..spec.val_batches)
                .map(|_| draw(&teacher, &readout, sigma, spec.val_batch_size, &mut rng))
                .collect();
            let test = draw(&teacher, &readout, sigma, spec.n_test, &mut rng);
            TaskData { noise: sigma, train, val, test }
        })
        .collect();
    Ok(SyntheticSuite { spec: spec.clone(), tasks })
}
