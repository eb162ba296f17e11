use iad_core::data::{self, Dataset, MinMaxScaler};
use iad_core::evaluation;
use iad_core::training::{self, TrainConfig};
use iad_core::{rng, Error, LossKind};

fn blobs(per_class: usize, seed: u64) -> (Dataset, Dataset) {
    let raw = data::make_blobs(3, per_class, &data::triangle_centers(4.0), 0.6, &mut rng::stream(seed)).unwrap();
    let scaled = MinMaxScaler::fit(&raw).unwrap().transform(&raw).unwrap();
    let mut parts = data::split(&scaled, &[0.8, 0.2], &mut rng::stream(seed + 1)).unwrap();
    let val = parts.pop().unwrap();
    (parts.pop().unwrap(), val)
}

fn quick(loss: LossKind) -> TrainConfig {
    TrainConfig { loss, max_epochs: 30, t0: 2, t_rate: 10, learning_rate: 5e-3, batch_size: 32, ..Default::default() }
}

#[test]
fn training_learns_and_is_deterministic() {
    let (train, val) = blobs(150, 1);
    let cfg = quick(LossKind::Iad);
    let (net, rec) = training::train(&train, &val, &[2, 16, 16, 3], &cfg).unwrap();
    let (net2, rec2) = training::train(&train, &val, &[2, 16, 16, 3], &cfg).unwrap();
    assert_eq!(net, net2);
    assert_eq!(rec.epochs.iter().map(|e| e.val_loss).collect::<Vec<_>>(), rec2.epochs.iter().map(|e| e.val_loss).collect::<Vec<_>>());
    let first = &rec.epochs[0];
    let best = &rec.epochs[rec.best_epoch - 1];
    assert!(best.val_loss < first.val_loss);
    assert!(best.val_acc > 0.95, "val acc {}", best.val_acc);
    // Returned parameters are the best epoch's.
    let (val_loss, _) = training::evaluate_loss(&net, &val, &cfg, cfg.lambda_max).unwrap();
    assert_eq!(val_loss, best.val_loss);
    // Earliest minimum.
    let min = rec.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(rec.epochs.iter().position(|e| e.val_loss == min).unwrap() + 1, rec.best_epoch);
    for e in &rec.epochs {
        assert_eq!(e.lambda_t, training::anneal_lambda(&cfg, e.epoch));
    }
}

#[test]
fn every_loss_trains() {
    let (train, val) = blobs(60, 2);
    for loss in LossKind::ALL {
        let cfg = TrainConfig { max_epochs: 10, ..quick(loss) };
        let (net, rec) = training::train(&train, &val, &[2, 8, 3], &cfg).unwrap();
        assert_eq!(rec.epochs.len(), 10);
        assert!(rec.epochs.iter().all(|e| e.train_loss.is_finite()));
        assert_eq!(net.layer_sizes(), vec![2, 8, 3]);
    }
}

#[test]
fn early_stopping_honours_patience() {
    let (train, val) = blobs(60, 3);
    let cfg = TrainConfig { patience: 2, max_epochs: 300, learning_rate: 0.05, ..quick(LossKind::Iad) };
    let (_, rec) = training::train(&train, &val, &[2, 8, 3], &cfg).unwrap();
    if rec.stopped_early {
        assert_eq!(rec.epochs.len(), rec.best_epoch + cfg.patience);
    } else {
        assert_eq!(rec.epochs.len(), cfg.max_epochs);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let (train, val) = blobs(50, 4);
    let cfg = TrainConfig { max_epochs: 5, ..quick(LossKind::Iad) };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| training::train(&train, &val, &[2, 8, 3], &cfg).unwrap())
    };
    assert_eq!(run(1).0, run(4).0);
}

#[test]
fn training_input_errors() {
    let (train, val) = blobs(20, 5);
    let cfg = quick(LossKind::Iad);
    assert!(training::train(&train, &val, &[3, 8, 3], &cfg).is_err());
    assert!(training::train(&train, &val, &[2, 8, 4], &cfg).is_err());
    assert!(training::train(&train.unlabelled(), &val, &[2, 8, 3], &cfg).is_err());
    let bad = TrainConfig { learning_rate: -1.0, ..cfg };
    assert!(training::train(&train, &val, &[2, 8, 3], &bad).is_err());
}

#[test]
fn runaway_learning_rate_is_reported_as_divergence() {
    let (train, val) = blobs(30, 6);
    let cfg = TrainConfig { learning_rate: 1e6, max_epochs: 50, ..quick(LossKind::Iad) };
    match training::train(&train, &val, &[2, 8, 3], &cfg) {
        Err(Error::Divergence { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|r| r.1.epochs.len())),
    }
}

#[test]
fn evaluation_on_trained_model() {
    let (train, test) = blobs(150, 7);
    let cfg = quick(LossKind::Iad);
    let (net, _) = training::train(&train, &test, &[2, 16, 16, 3], &cfg).unwrap();
    let reports = evaluation::evaluate(&net, &test).unwrap();
    assert_eq!(reports.len(), test.len());
    let acc = evaluation::accuracy(&reports).unwrap();
    let correct = reports.iter().filter(|r| r.correct == Some(true)).count();
    assert_eq!(correct as f64 / reports.len() as f64, acc);

    let rows = evaluation::epsilon_sweep(&net, &test, &[0.0, 0.25, 0.5], &cfg.loss_config(), Some((0.0, 1.0)), 0.95).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].accuracy, acc);
    assert!(rows[2].accuracy <= rows[0].accuracy);
    let clean_mean = reports.iter().map(|r| r.entropy).sum::<f64>() / reports.len() as f64;
    assert!((rows[0].mean_entropy - clean_mean).abs() < 1e-12);

    let ring = data::make_ood_ring(&train, 1.5, 200, &mut rng::stream(8)).unwrap();
    let ood = evaluation::ood_evaluate(&net, &ring, 0.95).unwrap();
    assert_eq!(ood.entropy.count, 200);
    assert!(ood.entropy.median >= ood.mutual_info.median);
    let full = evaluation::ood_evaluate(&net, &ring, 1.0).unwrap();
    assert!(full.entropy.fraction_above_threshold <= ood.entropy.fraction_above_threshold);
    assert!(evaluation::ood_evaluate(&net, &ring, 0.0).is_err());
}
