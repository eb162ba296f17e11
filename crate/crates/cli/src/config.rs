use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use iad_core::training::TrainConfig;
use iad_core::verify::{log_grid, VerifyConfig};
use iad_core::LossKind;
use toml::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub per_class: usize,
    pub test_per_class: usize,
    pub side: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs(BlobSpec),
    Csv { train: PathBuf, test: PathBuf, num_classes: Option<usize> },
    Idx { train_images: PathBuf, train_labels: PathBuf, test_images: PathBuf, test_labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OodSource {
    None,
    Ring { radius_factor: f64, count: usize },
    Csv { path: PathBuf },
    Idx { images: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train: TrainConfig,
    pub validation_fraction: f64,
    pub hidden: Vec<usize>,
    pub data: DataSource,
    pub scale: bool,
    pub ood: OodSource,
    pub epsilons: Vec<f64>,
    pub clip: bool,
    pub bounds: Option<(f64, f64)>,
    pub threshold_fraction: f64,
    pub compare_losses: Vec<LossKind>,
    pub verify: VerifyConfig,
    pub verify_grid: (f64, f64, usize),
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub wall_clock: bool,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Keys {
    map: BTreeMap<String, Value>,
}

impl Keys {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.map.remove(key)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Float(f)) => Ok(f),
            Some(Value::Integer(i)) => Ok(i as f64),
            Some(v) => bail!("config key `{key}`: expected a number, found {}", v.type_str()),
        }
    }

    fn usize_opt(&mut self, key: &str) -> Result<Option<usize>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as usize)),
            Some(v) => bail!("config key `{key}`: expected a non-negative integer, found {v}"),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(b),
            Some(v) => bail!("config key `{key}`: expected a boolean, found {}", v.type_str()),
        }
    }

    fn str_opt(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => bail!("config key `{key}`: expected a string, found {}", v.type_str()),
        }
    }

    fn path(&mut self, key: &str) -> Result<PathBuf> {
        self.str_opt(key)?.map(PathBuf::from).ok_or_else(|| anyhow!("config key `{key}` is required"))
    }

    fn array(&mut self, key: &str) -> Result<Option<Vec<Value>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(a)) => Ok(Some(a)),
            Some(v) => bail!("config key `{key}`: expected an array, found {}", v.type_str()),
        }
    }

    fn f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        self.array(key)?
            .map(|a| {
                a.into_iter()
                    .map(|v| match v {
                        Value::Float(f) => Ok(f),
                        Value::Integer(i) => Ok(i as f64),
                        other => bail!("config key `{key}`: expected numbers, found {}", other.type_str()),
                    })
                    .collect()
            })
            .transpose()
    }

    fn usize_list(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        self.array(key)?
            .map(|a| {
                a.into_iter()
                    .map(|v| match v {
                        Value::Integer(i) if i > 0 => Ok(i as usize),
                        other => bail!("config key `{key}`: expected positive integers, found {other}"),
                    })
                    .collect()
            })
            .transpose()
    }

    fn loss(&mut self, key: &str, default: LossKind) -> Result<LossKind> {
        match self.str_opt(key)? {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| anyhow!("config key `{key}`: unknown loss `{s}`")),
        }
    }
}

pub const DEFAULT_EPSILONS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().context("config is not valid TOML")?;
        let mut map = BTreeMap::new();
        flatten("", &table, &mut map);
        let mut k = Keys { map };

        let seed = match k.take("seed") {
            None => 0,
            Some(Value::Integer(i)) if i >= 0 => i as u64,
            Some(v) => bail!("config key `seed`: expected a non-negative integer, found {v}"),
        };
        let d = TrainConfig::default();
        let train = TrainConfig {
            loss: k.loss("train.loss", d.loss)?,
            p_norm: k.f64_or("train.p_norm", d.p_norm)?,
            lambda_max: k.f64_or("train.lambda_max", d.lambda_max)?,
            kl_beta: k.f64_or("train.kl_beta", d.kl_beta)?,
            t0: k.usize_or("train.t0", d.t0)?,
            t_rate: k.usize_or("train.t_rate", d.t_rate)?,
            learning_rate: k.f64_or("train.learning_rate", d.learning_rate)?,
            adam_beta1: k.f64_or("train.adam_beta1", d.adam_beta1)?,
            adam_beta2: k.f64_or("train.adam_beta2", d.adam_beta2)?,
            adam_eps: k.f64_or("train.adam_eps", d.adam_eps)?,
            batch_size: k.usize_or("train.batch_size", d.batch_size)?,
            max_epochs: k.usize_or("train.max_epochs", d.max_epochs)?,
            patience: k.usize_or("train.patience", d.patience)?,
            seed,
        };
        train.validate().context("invalid train.* settings")?;
        let validation_fraction = k.f64_or("train.validation_fraction", 0.1)?;
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            bail!("config key `train.validation_fraction`: must lie in (0, 1)");
        }
        let hidden = k.usize_list("model.hidden")?.unwrap_or_else(|| vec![32, 32]);
        if hidden.is_empty() {
            bail!("config key `model.hidden`: at least one hidden layer is required");
        }

        let source = k.str_opt("data.source")?.unwrap_or_else(|| "blobs".into());
        let data = match source.as_str() {
            "blobs" => DataSource::Blobs(BlobSpec {
                per_class: k.usize_or("data.blobs.per_class", 1000)?,
                test_per_class: k.usize_or("data.blobs.test_per_class", 1000)?,
                side: k.f64_or("data.blobs.side", 4.0)?,
                spread: k.f64_or("data.blobs.spread", 0.6)?,
            }),
            "csv" => DataSource::Csv {
                train: k.path("data.csv.train")?,
                test: k.path("data.csv.test")?,
                num_classes: k.usize_opt("data.csv.num_classes")?,
            },
            "idx" => DataSource::Idx {
                train_images: k.path("data.idx.train_images")?,
                train_labels: k.path("data.idx.train_labels")?,
                test_images: k.path("data.idx.test_images")?,
                test_labels: k.path("data.idx.test_labels")?,
            },
            other => bail!("config key `data.source`: unknown source `{other}` (expected blobs, csv or idx)"),
        };
        let scale = k.bool_or("data.scale", matches!(data, DataSource::Blobs(_)))?;

        let ood_source = k.str_opt("ood.source")?.unwrap_or_else(|| "ring".into());
        let ood = match ood_source.as_str() {
            "none" => OodSource::None,
            "ring" => OodSource::Ring {
                radius_factor: k.f64_or("ood.ring.radius_factor", 1.5)?,
                count: k.usize_or("ood.ring.count", 1000)?,
            },
            "csv" => OodSource::Csv { path: k.path("ood.csv.path")? },
            "idx" => OodSource::Idx { images: k.path("ood.idx.images")? },
            other => bail!("config key `ood.source`: unknown source `{other}` (expected none, ring, csv or idx)"),
        };

        let epsilons = k.f64_list("attack.epsilons")?.unwrap_or_else(|| DEFAULT_EPSILONS.to_vec());
        if epsilons.is_empty() || epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) || epsilons.windows(2).any(|w| w[1] < w[0]) {
            bail!("config key `attack.epsilons`: expected a non-empty ascending list of non-negative values");
        }
        let clip = k.bool_or("attack.clip", true)?;
        let bounds = match k.f64_list("attack.bounds")? {
            None => None,
            Some(b) if b.len() == 2 && b[0] <= b[1] => Some((b[0], b[1])),
            Some(_) => bail!("config key `attack.bounds`: expected [low, high] with low <= high"),
        };
        let threshold_fraction = k.f64_or("eval.threshold_fraction", 0.95)?;
        if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
            bail!("config key `eval.threshold_fraction`: must lie in (0, 1]");
        }
        let compare_losses = match k.array("compare.losses")? {
            None => vec![LossKind::Iad, LossKind::Edl],
            Some(a) => a
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => s.parse().map_err(|_| anyhow!("config key `compare.losses`: unknown loss `{s}`")),
                    other => bail!("config key `compare.losses`: expected strings, found {}", other.type_str()),
                })
                .collect::<Result<_>>()?,
        };
        if compare_losses.is_empty() {
            bail!("config key `compare.losses`: at least one loss is required");
        }

        let vd = VerifyConfig::default();
        let verify_grid = (
            k.f64_or("verify.grid_min", 1.01)?,
            k.f64_or("verify.grid_max", 1e3)?,
            k.usize_or("verify.grid_points", 50)?,
        );
        let verify = VerifyConfig {
            seed,
            lemma_triples: k.usize_or("verify.lemma_triples", vd.lemma_triples)?,
            trials: k.usize_or("verify.trials", vd.trials)?,
            num_classes: k.usize_or("verify.num_classes", vd.num_classes)?,
            p_norm: k.f64_or("verify.p_norm", vd.p_norm)?,
            base_low: k.f64_or("verify.base_low", vd.base_low)?,
            base_high: k.f64_or("verify.base_high", vd.base_high)?,
            grid: log_grid(verify_grid.0, verify_grid.1, verify_grid.2).context("invalid verify.grid_* settings")?,
        };

        let checkpoint = k.str_opt("eval.checkpoint")?.map(PathBuf::from);
        let output_dir = k.str_opt("output.dir")?.map(PathBuf::from);
        let wall_clock = k.bool_or("output.wall_clock", false)?;

        if let Some(key) = k.map.keys().next() {
            bail!("unknown config key `{key}`");
        }
        Ok(Self {
            seed,
            train,
            validation_fraction,
            hidden,
            data,
            scale,
            ood,
            epsilons,
            clip,
            bounds,
            threshold_fraction,
            compare_losses,
            verify,
            verify_grid,
            checkpoint,
            output_dir,
            wall_clock,
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.verify.seed = seed;
    }

    /// Every resolved setting as sorted `key = value` lines. The output
    /// directory is omitted so that the text depends only on the experiment.
    pub fn to_resolved_toml(&self) -> String {
        let mut m: BTreeMap<&str, Value> = BTreeMap::new();
        let f = Value::Float;
        let i = |v: usize| Value::Integer(v as i64);
        let s = |v: &str| Value::String(v.to_string());
        let p = |v: &PathBuf| Value::String(v.display().to_string());
        m.insert("seed", Value::Integer(self.seed as i64));
        let t = &self.train;
        m.insert("train.loss", s(t.loss.as_str()));
        m.insert("train.p_norm", f(t.p_norm));
        m.insert("train.lambda_max", f(t.lambda_max));
        m.insert("train.kl_beta", f(t.kl_beta));
        m.insert("train.t0", i(t.t0));
        m.insert("train.t_rate", i(t.t_rate));
        m.insert("train.learning_rate", f(t.learning_rate));
        m.insert("train.adam_beta1", f(t.adam_beta1));
        m.insert("train.adam_beta2", f(t.adam_beta2));
        m.insert("train.adam_eps", f(t.adam_eps));
        m.insert("train.batch_size", i(t.batch_size));
        m.insert("train.max_epochs", i(t.max_epochs));
        m.insert("train.patience", i(t.patience));
        m.insert("train.validation_fraction", f(self.validation_fraction));
        m.insert("model.hidden", Value::Array(self.hidden.iter().map(|&h| i(h)).collect()));
        match &self.data {
            DataSource::Blobs(b) => {
                m.insert("data.source", s("blobs"));
                m.insert("data.blobs.per_class", i(b.per_class));
                m.insert("data.blobs.test_per_class", i(b.test_per_class));
                m.insert("data.blobs.side", f(b.side));
                m.insert("data.blobs.spread", f(b.spread));
            }
            DataSource::Csv { train, test, num_classes } => {
                m.insert("data.source", s("csv"));
                m.insert("data.csv.train", p(train));
                m.insert("data.csv.test", p(test));
                if let Some(k) = num_classes {
                    m.insert("data.csv.num_classes", i(*k));
                }
            }
            DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
                m.insert("data.source", s("idx"));
                m.insert("data.idx.train_images", p(train_images));
                m.insert("data.idx.train_labels", p(train_labels));
                m.insert("data.idx.test_images", p(test_images));
                m.insert("data.idx.test_labels", p(test_labels));
            }
        }
        m.insert("data.scale", Value::Boolean(self.scale));
        match &self.ood {
            OodSource::None => {
                m.insert("ood.source", s("none"));
            }
            OodSource::Ring { radius_factor, count } => {
                m.insert("ood.source", s("ring"));
                m.insert("ood.ring.radius_factor", f(*radius_factor));
                m.insert("ood.ring.count", i(*count));
            }
            OodSource::Csv { path } => {
                m.insert("ood.source", s("csv"));
                m.insert("ood.csv.path", p(path));
            }
            OodSource::Idx { images } => {
                m.insert("ood.source", s("idx"));
                m.insert("ood.idx.images", p(images));
            }
        }
        m.insert("attack.epsilons", Value::Array(self.epsilons.iter().map(|&e| f(e)).collect()));
        m.insert("attack.clip", Value::Boolean(self.clip));
        if let Some((lo, hi)) = self.bounds {
            m.insert("attack.bounds", Value::Array(vec![f(lo), f(hi)]));
        }
        m.insert("eval.threshold_fraction", f(self.threshold_fraction));
        if let Some(c) = &self.checkpoint {
            m.insert("eval.checkpoint", p(c));
        }
        m.insert("compare.losses", Value::Array(self.compare_losses.iter().map(|l| s(l.as_str())).collect()));
        let v = &self.verify;
        m.insert("verify.lemma_triples", i(v.lemma_triples));
        m.insert("verify.trials", i(v.trials));
        m.insert("verify.num_classes", i(v.num_classes));
        m.insert("verify.p_norm", f(v.p_norm));
        m.insert("verify.base_low", f(v.base_low));
        m.insert("verify.base_high", f(v.base_high));
        m.insert("verify.grid_min", f(self.verify_grid.0));
        m.insert("verify.grid_max", f(self.verify_grid.1));
        m.insert("verify.grid_points", i(self.verify_grid.2));
        m.insert("output.wall_clock", Value::Boolean(self.wall_clock));
        m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
