use iad_core::network::NetworkParams;
use iad_core::{rng, LossConfig, LossKind};
use rand::Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, g| m.max(g.abs())).max(1e-10);
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max) / scale
}

// True when every hidden pre-activation is far enough from the ReLU kink
// that a finite-difference step cannot cross it.
fn away_from_kinks(net: &NetworkParams, x: &[f64]) -> bool {
    let t = net.forward(x).unwrap();
    let hidden = &t.pre_activations[..t.pre_activations.len() - 1];
    hidden.iter().flatten().all(|z| z.abs() > 1e-3)
}

fn sample_points(net: &NetworkParams, n: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut r = rng::stream(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let x: Vec<f64> = (0..net.input_dim()).map(|_| r.random_range(-2.0..2.0)).collect();
        if away_from_kinks(net, &x) {
            out.push((x, r.random_range(0..net.num_classes())));
        }
    }
    out
}

fn perturbed_net(seed: u64) -> NetworkParams {
    let mut net = NetworkParams::init(&[2, 8, 8, 3], &mut rng::stream(seed)).unwrap();
    let mut r = rng::stream(seed + 1000);
    let flat: Vec<f64> = net.flatten().into_iter().map(|v| v + r.random_range(-0.3..0.3)).collect();
    net.load_flat(&flat).unwrap();
    net
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let cfg = LossConfig::default();
    for kind in [LossKind::Iad, LossKind::Edl, LossKind::Rkl] {
        let net = perturbed_net(5);
        for (x, c) in sample_points(&net, 50, 9) {
            let trace = net.forward(&x).unwrap();
            let (_, dalpha) = kind.value_and_grad(&trace.alpha, c, &cfg, 0.5).unwrap();
            let analytic = net.backward(&trace, &dalpha).unwrap().flatten();
            let theta = net.flatten();
            let mut probe = net.clone();
            let mut loss_at = |flat: &[f64]| {
                probe.load_flat(flat).unwrap();
                kind.value_and_grad(&probe.predict(&x).unwrap(), c, &cfg, 0.5).unwrap().0
            };
            let numeric: Vec<f64> = (0..theta.len())
                .map(|i| {
                    let mut plus = theta.clone();
                    plus[i] += STEP;
                    let mut minus = theta.clone();
                    minus[i] -= STEP;
                    (loss_at(&plus) - loss_at(&minus)) / (2.0 * STEP)
                })
                .collect();
            let err = max_rel_error(&analytic, &numeric);
            assert!(err <= TOL, "{kind} at {x:?}: relative error {err}");
        }
    }
}

#[test]
fn input_gradients_match_finite_differences() {
    let cfg = LossConfig::default();
    let net = perturbed_net(6);
    for (x, c) in sample_points(&net, 50, 10) {
        let analytic = net.input_gradient(&x, c, &cfg).unwrap();
        let f = |v: &[f64]| iad_core::losses::iad_loss(&net.predict(v).unwrap(), c, cfg.p_norm).unwrap();
        let numeric: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut plus = x.clone();
                plus[i] += STEP;
                let mut minus = x.clone();
                minus[i] -= STEP;
                (f(&plus) - f(&minus)) / (2.0 * STEP)
            })
            .collect();
        let err = max_rel_error(&analytic, &numeric);
        assert!(err <= TOL, "at {x:?}: relative error {err}");
    }
}

#[test]
fn deeper_network_gradients() {
    let cfg = LossConfig::default();
    let net = NetworkParams::init(&[4, 6, 5, 4, 5], &mut rng::stream(77)).unwrap();
    for (x, c) in sample_points(&net, 10, 78) {
        let trace = net.forward(&x).unwrap();
        let (_, dalpha) = LossKind::Iad.value_and_grad(&trace.alpha, c, &cfg, 0.2).unwrap();
        let analytic = net.backward(&trace, &dalpha).unwrap().flatten();
        let theta = net.flatten();
        let mut probe = net.clone();
        let numeric: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut eval = |delta: f64| {
                    let mut t = theta.clone();
                    t[i] += delta;
                    probe.load_flat(&t).unwrap();
                    LossKind::Iad.value_and_grad(&probe.predict(&x).unwrap(), c, &cfg, 0.2).unwrap().0
                };
                (eval(STEP) - eval(-STEP)) / (2.0 * STEP)
            })
            .collect();
        assert!(max_rel_error(&analytic, &numeric) <= TOL);
    }
}
