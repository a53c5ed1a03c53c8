//! Built-in invariant checks behind `coba selftest`.
//!
//! The softmax used by the score checks is a parameter so that a corrupted
//! implementation can be plugged in to confirm the suite catches it.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scheduler::{CobaConfig, Scheduler, SchedulerKind};
use crate::scores::{
    acs_arguments, rcs_arguments, stable_softmax, DivergenceState, ScoreVector, SlopeHistory,
    DEFAULT_TAU, EPS_DEN,
};
use crate::slope::LossRatioWindow;

pub type SoftmaxFn = fn(&[f64]) -> Result<ScoreVector>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        if self.detail.is_empty() {
            write!(f, "{status} {}", self.name)
        } else {
            write!(f, "{status} {}: {}", self.name, self.detail)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            1
        }
    }
}

type Check = fn(SoftmaxFn) -> std::result::Result<(), String>;

const CHECKS: [(&str, Check); 7] = [
    ("softmax_simplex", softmax_simplex),
    ("softmax_reference_values", softmax_reference_values),
    ("rcs_ordering", rcs_ordering),
    ("acs_sign_rule", acs_sign_rule),
    ("df_constant_negative_slope", df_constant_negative_slope),
    ("ols_spot_checks", ols_spot_checks),
    ("scheduler_simplex_and_warmup", scheduler_simplex_and_warmup),
];

/// Runs every check with the library's softmax.
pub fn run() -> SelftestReport {
    run_with(stable_softmax)
}

/// Runs every check with `softmax` standing in for the score softmax.
pub fn run_with(softmax: SoftmaxFn) -> SelftestReport {
    let checks = CHECKS
        .iter()
        .map(|(name, check)| {
            let (passed, detail) = match check(softmax) {
                Ok(()) => (true, String::new()),
                Err(d) => (false, d),
            };
            CheckOutcome { name, passed, detail }
        })
        .collect();
    SelftestReport { checks }
}

fn on_simplex(v: &[f64], what: &str) -> std::result::Result<(), String> {
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || v.iter().any(|x| !(*x >= 0.0)) {
        return Err(format!("{what} {v:?} is off the simplex (sum {sum})"));
    }
    Ok(())
}

fn err_string(e: crate::CobaError) -> String {
    e.to_string()
}

fn softmax_simplex(softmax: SoftmaxFn) -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let k = rng.random_range(1..=16);
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-50.0..50.0)).collect();
        on_simplex(&softmax(&v).map_err(err_string)?, "softmax")?;
    }
    on_simplex(&softmax(&[1e300, -1e300]).map_err(err_string)?, "softmax of extreme inputs")
}

fn softmax_reference_values(softmax: SoftmaxFn) -> std::result::Result<(), String> {
    // e / (e + 1/e) and its complement.
    let want = [0.8807970779778824, 0.11920292202211756];
    let got = softmax(&[1.0, -1.0]).map_err(err_string)?;
    if got.iter().zip(want).any(|(g, w)| (g - w).abs() > 1e-15) {
        return Err(format!("softmax(1, -1) = {:?}, expected {want:?}", got.as_slice()));
    }
    Ok(())
}

fn rcs_ordering(softmax: SoftmaxFn) -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let k = rng.random_range(2..=16);
        let slopes: Vec<f64> = (0..k).map(|_| rng.random_range(-1e-2..1e-2)).collect();
        let rcs = softmax(&rcs_arguments(&slopes, EPS_DEN).map_err(err_string)?).map_err(err_string)?;
        on_simplex(&rcs, "rcs")?;
        for i in 0..k {
            for j in 0..k {
                if slopes[i] < slopes[j] && !(rcs[i] < rcs[j]) {
                    return Err(format!("slope {} < {} but rcs {} >= {}", slopes[i], slopes[j], rcs[i], rcs[j]));
                }
            }
        }
    }
    Ok(())
}

fn acs_sign_rule(softmax: SoftmaxFn) -> std::result::Result<(), String> {
    let histories = [
        SlopeHistory::from_slopes(0, 8, &[-3.7e-3; 8]).map_err(err_string)?,
        SlopeHistory::from_slopes(1, 8, &[2.9e-4; 8]).map_err(err_string)?,
    ];
    let args = acs_arguments(&histories, EPS_DEN).map_err(err_string)?;
    if args != [1.0, -1.0] {
        return Err(format!("constant histories give arguments {args:?}, expected [1, -1]"));
    }
    let acs = softmax(&args).map_err(err_string)?;
    if (acs[0] - 0.88080).abs() > 1e-4 || (acs[1] - 0.11920).abs() > 1e-4 {
        return Err(format!("acs {:?}, expected [0.88080, 0.11920]", acs.as_slice()));
    }
    Ok(())
}

fn df_constant_negative_slope(_: SoftmaxFn) -> std::result::Result<(), String> {
    for alpha in [-1e-3, -0.37, -5e-7] {
        let mut df = DivergenceState::new(DEFAULT_TAU, EPS_DEN, None).map_err(err_string)?;
        for t in 1..=2000 {
            let v = df.step(alpha).map_err(err_string)?;
            if v != 1.0 {
                return Err(format!("DF({t}) = {v} for constant slope {alpha}"));
            }
        }
    }
    Ok(())
}

fn ols_spot_checks(_: SoftmaxFn) -> std::result::Result<(), String> {
    // Frozen value: y = [1, 0.9, 0.86] at x = [0, 1, 2] gives slope -0.07, intercept 0.99.
    let mut w = LossRatioWindow::new(0, 4).map_err(err_string)?;
    for (s, l) in [(0, 1.0), (1, 0.9), (2, 0.86)] {
        w.push_loss(s, l).map_err(err_string)?;
    }
    let fit = w.fit_slope();
    if (fit.alpha + 0.07).abs() > 1e-12 || (fit.beta - 0.99).abs() > 1e-12 {
        return Err(format!("three-point fit gave ({}, {})", fit.alpha, fit.beta));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(2..=32);
        let mut w = LossRatioWindow::new(0, n).map_err(err_string)?;
        let mut s = rng.random_range(0..1000u64);
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            s += rng.random_range(1..4);
            let r = w.push_loss(s, rng.random_range(0.1..2.0)).map_err(err_string)?;
            pts.push((s as f64, r));
        }
        let (a, b) = normal_equations(&pts);
        let fit = w.fit_slope();
        if (fit.alpha - a).abs() > 1e-10 || (fit.beta - b).abs() > 1e-10 * (1.0 + b.abs()) {
            return Err(format!("fit ({}, {}) vs normal equations ({a}, {b})", fit.alpha, fit.beta));
        }
    }
    Ok(())
}

fn normal_equations(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let (sx, sxx, sy, sxy) = pts.iter().fold((0.0, 0.0, 0.0, 0.0), |(a, b, c, d), (x, y)| {
        (a + x, b + x * x, c + y, d + x * y)
    });
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

fn scheduler_simplex_and_warmup(_: SoftmaxFn) -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in [2, 5, 9] {
        let cfg = CobaConfig::new(k, 4);
        let mut s = Scheduler::new(SchedulerKind::Coba, cfg.clone()).map_err(err_string)?;
        let mut losses: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        for t in 0..300 {
            for l in &mut losses {
                *l *= rng.random_range(0.97..1.02);
            }
            let r = s.step(&losses).map_err(err_string)?;
            if t < cfg.warmup && r.weights.iter().any(|w| *w != 1.0 / k as f64) {
                return Err(format!("step {t} inside warm-up has weights {:?}", r.weights));
            }
            on_simplex(&r.weights, "weights")?;
            on_simplex(&r.rcs, "rcs")?;
            on_simplex(&r.acs, "acs")?;
            if !(0.0..=1.0).contains(&r.df) {
                return Err(format!("df {} outside [0, 1]", r.df));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let report = run();
        assert!(report.all_passed(), "{:?}", report.checks);
        assert_eq!(report.checks.len(), CHECKS.len());
        assert_eq!(report.exit_code(), 0);
    }

    fn reversed_softmax(v: &[f64]) -> Result<ScoreVector> {
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        stable_softmax(&neg)
    }

    fn unnormalized_softmax(v: &[f64]) -> Result<ScoreVector> {
        Ok(ScoreVector::new(v.iter().map(|x| x.exp()).collect()))
    }

    #[test]
    fn corrupted_softmax_is_caught() {
        for bad in [reversed_softmax as SoftmaxFn, unnormalized_softmax] {
            let report = run_with(bad);
            assert!(!report.all_passed());
            assert_ne!(report.exit_code(), 0);
        }
    }

    #[test]
    fn display_lists_status() {
        let c = CheckOutcome { name: "x", passed: false, detail: "boom".into() };
        assert_eq!(c.to_string(), "FAIL x: boom");
    }
}
