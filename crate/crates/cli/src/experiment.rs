//! Data preparation and model fitting shared by the commands.

use anyhow::{bail, Context, Result};
use iad_core::data::{self, Dataset, MinMaxScaler};
use iad_core::network::NetworkParams;
use iad_core::training::{self, TrainConfig, TrainRecord};
use iad_core::{rng, LossKind};

use crate::config::{DataSource, ExperimentConfig, OodSource};

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub scaler: Option<MinMaxScaler>,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (train, test) = match &cfg.data {
        DataSource::Blobs(b) => {
            let centers = data::triangle_centers(b.side);
            let train = data::make_blobs(3, b.per_class, &centers, b.spread, &mut rng::derive_stream(cfg.seed, "blobs"))?;
            let test = data::make_blobs(3, b.test_per_class, &centers, b.spread, &mut rng::derive_stream(cfg.seed, "blobs-test"))?;
            (train, test)
        }
        DataSource::Csv { train, test, num_classes } => {
            let tr = Dataset::read_csv(train, *num_classes).with_context(|| format!("reading {}", train.display()))?;
            let k = num_classes.or(tr.num_classes());
            let te = Dataset::read_csv(test, k).with_context(|| format!("reading {}", test.display()))?;
            (tr, te)
        }
        DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
            let tr = data::load_idx(train_images, train_labels, None)
                .with_context(|| format!("reading {} / {}", train_images.display(), train_labels.display()))?;
            let te = data::load_idx(test_images, test_labels, tr.num_classes())
                .with_context(|| format!("reading {} / {}", test_images.display(), test_labels.display()))?;
            (tr, te)
        }
    };
    if !train.is_labelled() || !test.is_labelled() {
        bail!("training and test data must be labelled");
    }
    if train.dim() != test.dim() {
        bail!("train and test feature dimensions differ ({} vs {})", train.dim(), test.dim());
    }
    if train.num_classes() != test.num_classes() {
        bail!("train and test class counts differ");
    }
    let train = train.with_split("train");
    let test = test.with_split("test");
    if cfg.scale {
        let scaler = MinMaxScaler::fit(&train)?;
        Ok(Prepared { train: scaler.transform(&train)?, test: scaler.transform(&test)?, scaler: Some(scaler) })
    } else {
        Ok(Prepared { train, test, scaler: None })
    }
}

pub fn prepare_ood(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<Option<Dataset>> {
    let scale = |d: Dataset| -> Result<Dataset> {
        Ok(match &prepared.scaler {
            Some(s) => s.transform(&d)?,
            None => d,
        })
    };
    let ood = match &cfg.ood {
        OodSource::None => return Ok(None),
        OodSource::Ring { radius_factor, count } => {
            data::make_ood_ring(&prepared.train, *radius_factor, *count, &mut rng::derive_stream(cfg.seed, "ood"))?
        }
        OodSource::Csv { path } => {
            scale(Dataset::read_csv(path, None).with_context(|| format!("reading {}", path.display()))?.unlabelled())?
        }
        OodSource::Idx { images } => {
            scale(data::load_idx_unlabelled(images).with_context(|| format!("reading {}", images.display()))?)?
        }
    };
    if ood.dim() != prepared.train.dim() {
        bail!("OOD feature dimension {} does not match training data {}", ood.dim(), prepared.train.dim());
    }
    Ok(Some(ood))
}

pub fn architecture(cfg: &ExperimentConfig, train: &Dataset) -> Vec<usize> {
    let mut sizes = vec![train.dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(train.num_classes().unwrap_or(0));
    sizes
}

/// Clipping bounds for attacks: explicit bounds, else `[0, 1]` for scaled
/// features, else the attacked data's own range.
pub fn attack_bounds(cfg: &ExperimentConfig, attacked: &Dataset) -> Option<(f64, f64)> {
    if !cfg.clip {
        return None;
    }
    Some(cfg.bounds.unwrap_or(if cfg.scale { (0.0, 1.0) } else { attacked.feature_range() }))
}

pub fn train_config_for(cfg: &ExperimentConfig, loss: LossKind) -> TrainConfig {
    TrainConfig { loss, ..cfg.train.clone() }
}

/// Fit on `train`, holding out a stratified validation split for early stopping.
pub fn fit(cfg: &ExperimentConfig, train: &Dataset, loss: LossKind) -> Result<(NetworkParams, TrainRecord)> {
    let v = cfg.validation_fraction;
    let parts = data::split(train, &[1.0 - v, v], &mut rng::derive_stream(cfg.seed, "holdout"))?;
    let arch = architecture(cfg, train);
    Ok(training::train(&parts[0], &parts[1], &arch, &train_config_for(cfg, loss))?)
}

pub fn check_checkpoint(cfg: &ExperimentConfig, net: &NetworkParams, train: &Dataset) -> Result<()> {
    let expected = architecture(cfg, train);
    if net.layer_sizes() != expected {
        bail!("checkpoint architecture {:?} does not match the configured architecture {:?}", net.layer_sizes(), expected);
    }
    Ok(())
}
