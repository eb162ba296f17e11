//! Minibatch training with Adam, regularizer annealing and early stopping.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::linalg::compensated_sum;
use crate::losses::{LossConfig, LossKind};
use crate::network::{Gradients, NetworkParams};
use crate::rng;

/// Per-component cap on `∂loss/∂α` before backpropagation.
pub const ALPHA_GRAD_CLIP: f64 = 1e6;
/// Any example with a Dirichlet strength above this aborts training.
pub const MAX_STRENGTH: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub p_norm: f64,
    pub lambda_max: f64,
    pub kl_beta: f64,
    /// Warm-up epochs with the regularizer switched off.
    pub t0: usize,
    /// Epochs over which the regularizer weight ramps up to `lambda_max`.
    pub t_rate: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Iad,
            p_norm: 4.0,
            lambda_max: 0.5,
            kl_beta: 100.0,
            t0: 10,
            t_rate: 60,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.t_rate == 0 {
            return bad("t_rate must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { p_norm: self.p_norm, lambda_max: self.lambda_max, kl_beta: self.kl_beta }
    }
}

/// `λ_t = λ · min((t − T₀)/T, 1)` for `t > T₀`, zero before.
pub fn anneal_lambda(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch <= cfg.t0 {
        return 0.0;
    }
    let ramp = (epoch - cfg.t0) as f64 / cfg.t_rate as f64;
    cfg.lambda_max * ramp.min(1.0)
}

/// Adam with bias-corrected moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), actual: params.len() });
        }
        if grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), actual: grads.len() });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lambda_t: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Number of `∂loss/∂α` components that hit [`ALPHA_GRAD_CLIP`].
    pub clipped_gradients: u64,
}

impl TrainRecord {
    /// `epoch,train_loss,val_loss,val_acc,lambda_t,seconds`. With
    /// `wall_clock = false` the `seconds` field is left empty so that
    /// repeated runs produce identical files.
    pub fn write_csv<W: Write>(&self, out: W, wall_clock: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss", "val_acc", "lambda_t", "seconds"])?;
        for e in &self.epochs {
            let secs = if wall_clock { e.seconds.to_string() } else { String::new() };
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.val_acc.to_string(),
                e.lambda_t.to_string(),
                secs,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct ExampleResult {
    loss: f64,
    grads: Gradients,
    clipped: u64,
}

fn example_step(
    net: &NetworkParams,
    x: &[f64],
    class: usize,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    lambda_t: f64,
    epoch: usize,
) -> Result<ExampleResult> {
    let trace = net.forward(x)?;
    if trace.alpha.alpha0() > MAX_STRENGTH {
        return Err(Error::Divergence {
            epoch,
            reason: format!("Dirichlet strength {} exceeds {MAX_STRENGTH}", trace.alpha.alpha0()),
        });
    }
    let (loss, mut g) = cfg.loss.value_and_grad(&trace.alpha, class, loss_cfg, lambda_t)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch, reason: format!("non-finite loss {loss}") });
    }
    let mut clipped = 0;
    for v in &mut g {
        if v.abs() > ALPHA_GRAD_CLIP {
            *v = ALPHA_GRAD_CLIP.copysign(*v);
            clipped += 1;
        }
    }
    Ok(ExampleResult { loss, grads: net.backward(&trace, &g)?, clipped })
}

/// Mean loss at weight `lambda` and accuracy of `net` on a labelled set.
pub fn evaluate_loss(net: &NetworkParams, data: &Dataset, cfg: &TrainConfig, lambda: f64) -> Result<(f64, f64)> {
    let labels = data.labels().ok_or(Error::InvalidArgument("evaluation data must be labelled".into()))?;
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let loss_cfg = cfg.loss_config();
    let per: Vec<(f64, bool)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let alpha = net.predict(data.row(i))?;
            let (l, _) = cfg.loss.value_and_grad(&alpha, labels[i], &loss_cfg, lambda)?;
            Ok((l, alpha.predictive_mean().argmax() == labels[i]))
        })
        .collect::<Result<_>>()?;
    let loss = compensated_sum(per.iter().map(|p| p.0)) / data.len() as f64;
    let acc = per.iter().filter(|p| p.1).count() as f64 / data.len() as f64;
    Ok((loss, acc))
}

/// Train on `train`, early-stopping on `validation`. Returns the parameters
/// from the epoch with the lowest validation loss (earliest on ties).
///
/// Validation loss is always measured at the full regularizer weight so that
/// it is comparable across the annealing ramp.
pub fn train(train: &Dataset, validation: &Dataset, arch: &[usize], cfg: &TrainConfig) -> Result<(NetworkParams, TrainRecord)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if validation.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let labels = train.labels().ok_or(Error::InvalidArgument("training data must be labelled".into()))?;
    let k = train.num_classes().unwrap();
    if arch.first() != Some(&train.dim()) || arch.last() != Some(&k) {
        return Err(Error::InvalidArgument(format!(
            "architecture {arch:?} does not map {} features to {k} classes",
            train.dim()
        )));
    }
    if validation.dim() != train.dim() || validation.num_classes() != Some(k) {
        return Err(Error::InvalidArgument("validation set does not match the training set".into()));
    }

    let mut net = NetworkParams::init(arch, &mut rng::derive_stream(cfg.seed, "init"))?;
    let mut shuffle_rng = rng::derive_stream(cfg.seed, "shuffle");
    let mut adam = Adam::new(net.num_params(), cfg);
    let loss_cfg = cfg.loss_config();
    let val_lambda = if cfg.loss == LossKind::Iad { cfg.lambda_max } else { 0.0 };

    let mut record = TrainRecord::default();
    let mut best: Option<(f64, NetworkParams)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let start = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        let lambda_t = anneal_lambda(cfg, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_losses = Vec::with_capacity(train.len());
        let mut clipped = 0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<ExampleResult> = batch
                .par_iter()
                .map(|&i| example_step(&net, train.row(i), labels[i], cfg, &loss_cfg, lambda_t, epoch))
                .collect::<Result<_>>()?;
            let mut total = Gradients::zeros_like(&net);
            for r in &results {
                total.add_assign(&r.grads);
                epoch_losses.push(r.loss);
                clipped += r.clipped;
            }
            total.scale(1.0 / batch.len() as f64);
            let mut flat = net.flatten();
            adam.step(&mut flat, &total.flatten())?;
            net.load_flat(&flat)?;
        }
        if clipped > 0 {
            log::warn!("epoch {epoch}: clipped {clipped} concentration-gradient components at {ALPHA_GRAD_CLIP}");
        }
        record.clipped_gradients += clipped;

        let train_loss = compensated_sum(epoch_losses) / train.len() as f64;
        let (val_loss, val_acc) = evaluate_loss(&net, validation, cfg, val_lambda)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, reason: format!("non-finite validation loss {val_loss}") });
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} acc {val_acc:.4} λ {lambda_t:.3}");
        record.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            lambda_t,
            seconds: start.elapsed().as_secs_f64(),
        });

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, net.clone()));
            record.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                record.stopped_early = true;
                break;
            }
        }
    }
    Ok((best.expect("at least one epoch").1, record))
}

/// [`train`] with a seeded, stratified 90/10 train/validation split.
pub fn train_with_holdout(data: &Dataset, arch: &[usize], cfg: &TrainConfig) -> Result<(NetworkParams, TrainRecord)> {
    let parts = data::split(data, &[0.9, 0.1], &mut rng::derive_stream(cfg.seed, "holdout"))?;
    train(&parts[0], &parts[1], arch, cfg)
}
