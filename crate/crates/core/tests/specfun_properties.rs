use iad_core::specfun::{self, raw};
use iad_core::verify::{log_grid, verify_lemma1, verify_lemma2};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn recurrences_hold_on_log_grid() {
    let grid = log_grid(0.5, 1e4, 1000).unwrap();
    let mut worst = [0.0f64; 3];
    for &x in &grid {
        let r0 = raw::digamma(x + 1.0) - raw::digamma(x) - 1.0 / x;
        let r1 = raw::trigamma(x + 1.0) - raw::trigamma(x) + 1.0 / (x * x);
        let r2 = raw::tetragamma(x + 1.0) - raw::tetragamma(x) - 2.0 / (x * x * x);
        for (w, r) in worst.iter_mut().zip([r0, r1, r2]) {
            *w = w.max(r.abs());
        }
    }
    assert!(worst.iter().all(|&w| w <= 1e-10), "worst residuals {worst:?}");
}

#[test]
fn log_gamma_recurrence() {
    for &x in &log_grid(0.5, 1e4, 1000).unwrap() {
        let r = raw::log_gamma(x + 1.0) - raw::log_gamma(x) - x.ln();
        assert!(r.abs() <= 1e-10 * raw::log_gamma(x + 1.0).abs().max(1.0), "x={x} residual {r}");
    }
}

// Each function against a central difference of the one below it.
#[test]
fn derivatives_match_central_differences() {
    for &x in &log_grid(1.5, 100.0, 200).unwrap() {
        let h = 1e-4 * x;
        let cd = |f: fn(f64) -> f64| (f(x + h) - f(x - h)) / (2.0 * h);
        assert!(rel(raw::digamma(x), cd(raw::log_gamma)) <= 1e-6, "digamma at {x}");
        assert!(rel(raw::trigamma(x), cd(raw::digamma)) <= 1e-6, "trigamma at {x}");
        assert!(rel(raw::tetragamma(x), cd(raw::trigamma)) <= 1e-6, "tetragamma at {x}");
    }
}

#[test]
fn lemma_suites_pass() {
    for seed in [0, 1, 2] {
        let l1 = verify_lemma1(seed, 1000);
        let l2 = verify_lemma2(seed, 1000);
        assert!(l1.verdict.passed, "{l1:?}");
        assert!(l2.verdict.passed, "{l2:?}");
        assert!(l1.min_margin > 0.0 && l2.min_margin > 0.0);
    }
}

#[test]
fn digamma_shift_vanishes_far_out() {
    for i in 1..=20 {
        let p = i as f64 * 0.5;
        let d = raw::digamma(1e4 + p) - raw::digamma(1e4);
        assert!(d > 0.0 && d < 1e-3, "p={p}: {d}");
    }
}

proptest! {
    #[test]
    fn lemma1_inequality(x2 in 1.0001f64..200.0, gap in 1e-3f64..200.0, p in 1e-3f64..10.0) {
        let x1 = x2 + gap;
        let shifted = raw::digamma(x1 + p) - raw::digamma(x2 + p);
        let plain = raw::digamma(x1) - raw::digamma(x2);
        prop_assert!(shifted > 0.0);
        prop_assert!(shifted < plain);
    }

    #[test]
    fn lemma2_inequality(x2 in 1.0001f64..200.0, gap in 1e-3f64..200.0, p in 1e-3f64..10.0) {
        let x1 = x2 + gap;
        let shifted = raw::trigamma(x1 + p) - raw::trigamma(x2 + p);
        let plain = raw::trigamma(x1) - raw::trigamma(x2);
        prop_assert!(plain < shifted);
        prop_assert!(shifted < 0.0);
    }

    #[test]
    fn log_gamma_ratio_consistent(x in 1e-3f64..1e5, q in 0.0f64..20.0) {
        let r = specfun::log_gamma_ratio(x, q).unwrap();
        let direct = raw::log_gamma(x + q) - raw::log_gamma(x);
        prop_assert!((r - direct).abs() <= 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn polygamma_signs(x in 1e-6f64..1e6) {
        prop_assert!(raw::trigamma(x) > 0.0);
        prop_assert!(raw::tetragamma(x) < 0.0);
    }

    #[test]
    fn beta_moment_in_unit_interval(a in 0.01f64..100.0, b in 0.01f64..100.0, q in 0.0f64..8.0) {
        let m = specfun::beta_moment(a, b, q).unwrap();
        prop_assert!(m > 0.0 && m <= 1.0 + 1e-12);
        // Moments of a [0,1] variable shrink with the order.
        let m2 = specfun::beta_moment(a, b, q + 1.0).unwrap();
        prop_assert!(m2 <= m * (1.0 + 1e-12));
    }
}
