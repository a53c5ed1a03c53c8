//! Test-only reference implementations.
//!
//! The weight pipeline is written directly from the formulas with no shared
//! code: raw (uncentered) normal equations for the slopes, literal sums for
//! every normalization and a full softmax over the divergence history at
//! every step. Gradients are checked against central differences.

#![allow(dead_code)]

use coba::trainer::{forward_loss, weighted_backward, Batch, SharedTrunkModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct OracleStep {
    pub slopes: Vec<f64>,
    pub rcs: Vec<f64>,
    pub acs: Vec<f64>,
    pub df: f64,
    pub weights: Vec<f64>,
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Least-squares slope through `(x, y)` pairs via `(X^T X)^{-1} X^T y`.
pub fn ols(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        sx += x;
        sxx += x * x;
        sy += y;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

/// Normal equations solved in exact rational arithmetic, rounded once at the end.
#[allow(dead_code)]
pub fn ols_exact(points: &[(f64, f64)]) -> (f64, f64) {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{ToPrimitive, Zero};

    let q = |v: f64| BigRational::from_float(v).expect("finite input");
    let n = BigRational::from_integer(BigInt::from(points.len()));
    let (mut sx, mut sxx, mut sy, mut sxy) =
        (BigRational::zero(), BigRational::zero(), BigRational::zero(), BigRational::zero());
    for &(x, y) in points {
        let (x, y) = (q(x), q(y));
        sxx += &x * &x;
        sxy += &x * &y;
        sx += x;
        sy += y;
    }
    let det = &n * &sxx - &sx * &sx;
    let alpha = (&n * &sxy - &sx * &sy) / &det;
    let beta = (&sxx * &sy - &sx * &sxy) / &det;
    (alpha.to_f64().unwrap(), beta.to_f64().unwrap())
}

pub fn rcs(slopes: &[f64]) -> Vec<f64> {
    let k = slopes.len() as f64;
    let denom: f64 = slopes.iter().map(|a| a.abs()).sum();
    if denom < 1e-12 {
        return vec![1.0 / k; slopes.len()];
    }
    softmax(&slopes.iter().map(|a| k * a / denom).collect::<Vec<_>>())
}

pub fn acs_args(histories: &[Vec<f64>]) -> Vec<f64> {
    histories
        .iter()
        .map(|h| {
            let n = h.len() as f64;
            let denom: f64 = h.iter().map(|a| a.abs()).sum();
            if denom < 1e-12 {
                0.0
            } else {
                -n * h[h.len() - 1] / denom
            }
        })
        .collect()
}

/// Runs the whole weight pipeline over `rows[t][task]` losses.
pub fn oracle_run(rows: &[Vec<f64>], window: usize, warmup: usize, tau: f64) -> Vec<OracleStep> {
    let k = rows[0].len();
    let mut out = Vec::new();
    let mut histories: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut amax: Vec<f64> = Vec::new();
    let mut z: Vec<f64> = Vec::new();
    for t in 0..rows.len() {
        let start = (t + 1).saturating_sub(window);
        let slopes: Vec<f64> = (0..k)
            .map(|i| {
                if t == 0 {
                    return 0.0;
                }
                let pts: Vec<(f64, f64)> = (start..=t)
                    .map(|s| (s as f64, rows[s][i] / rows[0][i]))
                    .collect();
                ols(&pts).0
            })
            .collect();
        let (acs, df) = if t == 0 {
            (vec![1.0 / k as f64; k], 1.0)
        } else {
            for i in 0..k {
                histories[i].push(slopes[i]);
                if histories[i].len() > window {
                    histories[i].remove(0);
                }
            }
            let m = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            amax.push(m);
            let j = amax.len() as f64;
            let prefix: f64 = amax.iter().sum();
            z.push(if prefix.abs() <= 1e-12 * m.abs() { 0.0 } else { -tau * j * m / prefix });
            let sm = softmax(&z);
            (softmax(&acs_args(&histories)), (j * sm[sm.len() - 1]).min(1.0))
        };
        let rcs = rcs(&slopes);
        let weights = if t < warmup {
            vec![1.0 / k as f64; k]
        } else {
            rcs.iter().zip(&acs).map(|(r, a)| df * r + (1.0 - df) * a).collect()
        };
        out.push(OracleStep { slopes, rcs, acs, df, weights });
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn objective(model: &SharedTrunkModel, batches: &[Batch], w: &[f64]) -> f64 {
    batches
        .iter()
        .enumerate()
        .map(|(i, b)| w[i] * forward_loss(model, b, i).unwrap())
        .sum()
}

/// Worst relative deviation between the analytic gradient and central
/// differences with step 1e-5, with the denominator floored at 1e-4.
pub fn fd_error(model: &SharedTrunkModel, batches: &[Batch], w: &[f64]) -> f64 {
    let refs: Vec<&Batch> = batches.iter().collect();
    let analytic = weighted_backward(model, &refs, w).unwrap().to_flat();
    let theta = model.parameters();
    let step = 1e-5;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut t = theta.clone();
        t[i] = theta[i] + step;
        probe.set_parameters(&t).unwrap();
        let up = objective(&probe, batches, w);
        t[i] = theta[i] - step;
        probe.set_parameters(&t).unwrap();
        let down = objective(&probe, batches, w);
        let numeric = (up - down) / (2.0 * step);
        let denom = a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

/// Random model parameters, per-task batches and simplex weights with
/// K <= 4, d <= 5, h <= 6.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (SharedTrunkModel, Vec<Batch>, Vec<f64>) {
    let k = rng.random_range(2..=4);
    let d = rng.random_range(1..=5);
    let h = rng.random_range(1..=6);
    let mut model = SharedTrunkModel::new(d, h, k, rng.random()).unwrap();
    let theta: Vec<f64> = (0..model.num_parameters()).map(|_| rng.random_range(-1.0..1.0)).collect();
    model.set_parameters(&theta).unwrap();
    let batches = (0..k)
        .map(|_| {
            let n = rng.random_range(1..=6);
            let x = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            Batch::new(x, y).unwrap()
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    (model, batches, raw.iter().map(|w| w / s).collect())
}
