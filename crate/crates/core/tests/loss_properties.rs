use iad_core::losses::{self, iad_loss, iad_loss_grad_alpha, info_regularizer, info_regularizer_grad_alpha};
use iad_core::verify::{self, VerifyConfig};
use iad_core::{rng, DirichletParams, LossConfig, LossKind};
use proptest::prelude::*;
use rand::Rng;

fn random_case(r: &mut impl Rng) -> (DirichletParams, usize, f64) {
    let k = r.random_range(2..=10);
    let alpha: Vec<f64> = (0..k).map(|_| r.random_range(1.01..50.0)).collect();
    let c = r.random_range(0..k);
    let p = r.random_range(1.0..4.0);
    (DirichletParams::new(alpha).unwrap(), c, p)
}

fn central_difference(d: &DirichletParams, f: impl Fn(&DirichletParams) -> f64) -> Vec<f64> {
    (0..d.num_classes())
        .map(|j| {
            let h = 1e-6 * d.alpha()[j];
            let shifted = |s: f64| {
                let mut a = d.alpha().to_vec();
                a[j] += s;
                f(&DirichletParams::new(a).unwrap())
            };
            (shifted(h) - shifted(-h)) / (2.0 * h)
        })
        .collect()
}

fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-12);
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn iad_gradient_matches_finite_differences() {
    let mut r = rng::stream(11);
    for _ in 0..1000 {
        let (d, c, p) = random_case(&mut r);
        let g = iad_loss_grad_alpha(&d, c, p).unwrap();
        let fd = central_difference(&d, |x| iad_loss(x, c, p).unwrap());
        assert!(max_rel_error(&g, &fd) <= 1e-6, "alpha {:?} c {c} p {p}: {g:?} vs {fd:?}", d.alpha());
    }
}

#[test]
fn regularizer_gradient_matches_finite_differences() {
    let mut r = rng::stream(12);
    for _ in 0..1000 {
        let (d, c, _) = random_case(&mut r);
        let g = info_regularizer_grad_alpha(&d, c).unwrap();
        let fd = central_difference(&d, |x| info_regularizer(x, c).unwrap());
        assert!(max_rel_error(&g, &fd) <= 1e-6, "alpha {:?} c {c}: {g:?} vs {fd:?}", d.alpha());
    }
}

#[test]
fn every_loss_kind_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    let mut r = rng::stream(13);
    for kind in LossKind::ALL {
        for _ in 0..100 {
            let (d, c, _) = random_case(&mut r);
            let lambda = 0.3;
            let (v, g) = kind.value_and_grad(&d, c, &cfg, lambda).unwrap();
            assert!(v.is_finite());
            let fd = central_difference(&d, |x| kind.value_and_grad(x, c, &cfg, lambda).unwrap().0);
            assert!(max_rel_error(&g, &fd) <= 1e-6, "{kind}: {g:?} vs {fd:?}");
        }
    }
}

// Monte Carlo estimate of E‖y − p‖_p^p with its standard error.
fn mc_pnorm(d: &DirichletParams, c: usize, p: f64, n: usize, seed: u64) -> (f64, f64) {
    let mut stream = rng::stream(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    d.sample_with(&mut stream, n, |s| {
        let v: f64 = s.iter().enumerate().map(|(j, &pj)| ((if j == c { 1.0 } else { 0.0 }) - pj).abs().powf(p)).sum();
        sum += v;
        sum_sq += v * v;
    })
    .unwrap();
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

#[test]
fn closed_form_matches_monte_carlo() {
    let mut r = rng::stream(14);
    for case in 0..10 {
        let (d, c, p) = random_case(&mut r);
        let closed = iad_loss(&d, c, p).unwrap().powf(p);
        let (mean, se) = mc_pnorm(&d, c, p, 100_000, 100 + case);
        assert!((closed - mean).abs() <= 5.0 * se, "case {case}: closed {closed} mc {mean} se {se}");
    }
}

#[test]
fn iad_at_p2_is_expected_squared_error() {
    let d = DirichletParams::new(vec![3.0, 2.0, 5.0]).unwrap();
    let lhs = iad_loss(&d, 2, 2.0).unwrap().powi(2);
    let rhs = losses::edl_mse_loss(&d, 2).unwrap();
    assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
}

#[test]
fn theorem_sweeps_pass_for_several_seeds() {
    for seed in [0, 7, 42] {
        let cfg = VerifyConfig { seed, ..Default::default() };
        for report in [verify::verify_theorem1(&cfg).unwrap(), verify::verify_theorem2(&cfg).unwrap(), verify::verify_theorem3(&cfg).unwrap()] {
            assert!(report.passed, "{} seed {seed}: failed trials {:?}", report.name, report.failed_trials);
            assert_eq!(report.sweeps.len(), 100);
        }
    }
}

#[test]
fn theorem_sweeps_are_reproducible() {
    let cfg = VerifyConfig { seed: 3, trials: 10, ..Default::default() };
    let a = serde_json::to_string(&verify::verify_theorem2(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&verify::verify_theorem2(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn figure_sweep_dips_then_rises() {
    let fig = verify::default_figure_sweep(0, &verify::log_grid(1.01, 1e3, 50).unwrap()).unwrap();
    assert!(fig.dips, "no dip: {:?}", fig.sweep.values);
    assert!(fig.sweep.values[49] > fig.sweep.values[0]);
    assert!(fig.approx_within_tolerance);
    assert!(fig.passed);
}

proptest! {
    #[test]
    fn norm_ordering(e in prop::collection::vec(-1.0f64..1.0, 2..12), p in 2.0001f64..16.0) {
        let inf = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lp = e.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p);
        let l2 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(inf <= lp * (1.0 + 1e-12));
        prop_assert!(lp <= l2 * (1.0 + 1e-12));
    }

    #[test]
    fn observing_the_correct_class_lowers_the_loss(
        alpha in prop::collection::vec(1.0f64..30.0, 2..8),
        c_seed in any::<usize>(),
        p in 1.0f64..6.0,
    ) {
        let d = DirichletParams::new(alpha).unwrap();
        let c = c_seed % d.num_classes();
        let before = iad_loss(&d, c, p).unwrap();
        let after = iad_loss(&d.observe(c).unwrap(), c, p).unwrap();
        prop_assert!(after < before);
        prop_assert!(before > 0.0);
    }

    #[test]
    fn regularizer_is_nonnegative_and_zero_at_floor(
        alpha in prop::collection::vec(1.0f64..30.0, 2..8),
        c_seed in any::<usize>(),
    ) {
        let d = DirichletParams::new(alpha.clone()).unwrap();
        let c = c_seed % d.num_classes();
        prop_assert!(info_regularizer(&d, c).unwrap() >= 0.0);
        let mut floor = vec![1.0; alpha.len()];
        floor[c] = alpha[c];
        prop_assert_eq!(info_regularizer(&DirichletParams::new(floor).unwrap(), c).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_is_mean_of_parts(
        alphas in prop::collection::vec(prop::collection::vec(1.0f64..20.0, 3), 1..6),
        lambda in 0.0f64..1.0,
    ) {
        let batch: Vec<(DirichletParams, usize)> =
            alphas.into_iter().enumerate().map(|(i, a)| (DirichletParams::new(a).unwrap(), i % 3)).collect();
        let total = losses::total_loss(&batch, lambda, 4.0).unwrap();
        let manual: f64 = batch.iter().map(|(d, c)| iad_loss(d, *c, 4.0).unwrap() + lambda * info_regularizer(d, *c).unwrap()).sum::<f64>()
            / batch.len() as f64;
        prop_assert!((total - manual).abs() <= 1e-12 * manual.abs().max(1.0));
    }
}
