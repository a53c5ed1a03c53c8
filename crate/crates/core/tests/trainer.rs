use coba::trainer::{
    forward_loss, loss_and_gradient, make_suite, run_experiment, sgd_step, weighted_backward, Batch,
    SharedTrunkModel, SuiteSpec,
};
use coba::{CobaConfig, SchedulerKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;
use common::{fd_error, random_instance};

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for case in 0..100 {
        let (model, batches, w) = random_instance(&mut rng);
        let err = fd_error(&model, &batches, &w);
        assert!(err < 1e-6, "case {case}: relative error {err:e}");
    }
}

#[test]
fn zero_weight_zeroes_head_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (model, batches, _) = random_instance(&mut rng);
    let k = model.num_tasks();
    let h = model.hidden();
    let mut w = vec![1.0 / (k - 1) as f64; k];
    w[1] = 0.0;
    let refs: Vec<&Batch> = batches.iter().collect();
    let g = weighted_backward(&model, &refs, &w).unwrap();
    assert!(g.head_w[h..2 * h].iter().all(|x| *x == 0.0));
    assert_eq!(g.head_b[1], 0.0);
}

#[test]
fn gradient_is_homogeneous_in_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (model, batches, w) = random_instance(&mut rng);
        let refs: Vec<&Batch> = batches.iter().collect();
        let g1 = weighted_backward(&model, &refs, &w).unwrap().to_flat();
        let w2: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let g2 = weighted_backward(&model, &refs, &w2).unwrap().to_flat();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn trunk_gradient_is_weighted_sum_of_task_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (model, batches, w) = random_instance(&mut rng);
    let k = model.num_tasks();
    let refs: Vec<&Batch> = batches.iter().collect();
    let total = weighted_backward(&model, &refs, &w).unwrap();
    let mut sum = vec![0.0; total.trunk_w.len()];
    for i in 0..k {
        let mut e = vec![0.0; k];
        e[i] = 1.0;
        let gi = weighted_backward(&model, &refs, &e).unwrap();
        for (s, g) in sum.iter_mut().zip(&gi.trunk_w) {
            *s += w[i] * g;
        }
    }
    for (a, b) in total.trunk_w.iter().zip(&sum) {
        assert!((a - b).abs() < 1e-13);
    }
}

#[test]
fn small_steps_decrease_the_objective() {
    // Full-batch descent on a noiseless task.
    let spec = SuiteSpec::new(3, 4, 60, 2, vec![0.0, 0.0], 17);
    let suite = make_suite(&spec).unwrap();
    let mut model = SharedTrunkModel::new(3, 4, 2, 9).unwrap();
    let batches: Vec<&Batch> = suite.tasks().iter().map(|t| &t.train).collect();
    let w = [0.3, 0.7];
    let mut prev = f64::INFINITY;
    for _ in 0..100 {
        let (losses, g) = loss_and_gradient(&model, &batches, &w).unwrap();
        let obj: f64 = losses.iter().zip(w).map(|(l, w)| l * w).sum();
        assert!(obj <= prev, "{obj} > {prev}");
        prev = obj;
        sgd_step(&mut model, &g, 1e-3).unwrap();
    }
}

fn three_task_spec(seed: u64) -> SuiteSpec {
    SuiteSpec::new(4, 8, 400, 8, vec![0.01, 0.1, 0.5], seed)
}

#[test]
fn forced_uniform_coba_matches_uniform_bitwise() {
    let suite = make_suite(&three_task_spec(1)).unwrap();
    let t_max = 150;
    let forced = CobaConfig::new(3, 8).with_warmup(t_max);
    let a = run_experiment(&suite, SchedulerKind::Coba, &forced, 0.05, t_max, 2).unwrap();
    let b = run_experiment(&suite, SchedulerKind::Uniform, &forced, 0.05, t_max, 2).unwrap();
    assert_eq!(a.train_losses, b.train_losses);
    assert_eq!(a.val_ratios, b.val_ratios);
    assert_eq!(a.test_losses, b.test_losses);
    assert_eq!(a.best_step, b.best_step);
}

#[test]
fn identical_tasks_have_identical_curves() {
    let spec = SuiteSpec {
        identical_tasks: true,
        ..SuiteSpec::new(4, 8, 200, 4, vec![0.1; 3], 6)
    };
    let suite = make_suite(&spec).unwrap();
    let r = run_experiment(&suite, SchedulerKind::Uniform, &CobaConfig::new(3, 4), 0.05, 200, 8).unwrap();
    for ratios in &r.val_ratios {
        assert!(ratios.iter().all(|x| (x - ratios[0]).abs() <= 1e-9));
    }
}

#[test]
fn noise_floors_are_ordered() {
    // Each task trained alone; the validation loss settles near sigma^2.
    let suite = make_suite(&three_task_spec(21)).unwrap();
    let floors: Vec<f64> = (0..3)
        .map(|i| {
            let mut model = SharedTrunkModel::new(4, 8, 3, 4).unwrap();
            let mut w = vec![0.0; 3];
            w[i] = 1.0;
            let batches: Vec<&Batch> = suite.tasks().iter().map(|t| &t.train).collect();
            for _ in 0..3000 {
                let (_, g) = loss_and_gradient(&model, &batches, &w).unwrap();
                sgd_step(&mut model, &g, 0.2).unwrap();
            }
            forward_loss(&model, &suite.full_validation(i), i).unwrap()
        })
        .collect();
    assert!(floors[0] < floors[1] && floors[1] < floors[2], "{floors:?}");
    assert!(floors[2] > 0.5 * 0.25, "{floors:?}");
}

fn post_warmup_means(seed: u64) -> (f64, f64) {
    let suite = make_suite(&three_task_spec(seed)).unwrap();
    let cfg = CobaConfig::new(3, 8);
    let r = run_experiment(&suite, SchedulerKind::Coba, &cfg, 1e-2, 1500, seed).unwrap();
    let post = &r.trace.records[cfg.warmup..];
    let n = post.len() as f64;
    (
        post.iter().map(|rec| rec.rcs[0]).sum::<f64>() / n,
        post.iter().map(|rec| rec.weights[0]).sum::<f64>() / n,
    )
}

#[test]
fn cleanest_task_gets_below_uniform_relative_score() {
    let (rcs, _) = post_warmup_means(2);
    assert!(rcs < 1.0 / 3.0, "mean RCS of the low-noise task: {rcs}");
}

// The absolute score favours the task whose slope is still steadily negative
// (the clean one) and penalises the noisy task whose slope hovers around zero,
// so the blended weight of the clean task ends up above 1/3 on this suite.
#[test]
#[ignore = "does not hold: ACS outweighs RCS for the clean task on this suite"]
fn cleanest_task_gets_below_uniform_weight() {
    let (_, w) = post_warmup_means(2);
    assert!(w < 1.0 / 3.0, "mean weight of the low-noise task: {w}");
}
