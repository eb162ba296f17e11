use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use iad_core::data::Dataset;
use iad_core::evaluation::{self, DistributionSummary};
use iad_core::network::NetworkParams;
use iad_core::training::TrainRecord;
use iad_core::verify;
use iad_core::LossKind;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DataSource, ExperimentConfig, OodSource};
use crate::experiment::{self, Prepared};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Output directory of a single command invocation.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Refuses a non-empty directory unless `force` is set.
    pub fn create(root: &Path, force: bool) -> Result<Self> {
        if root.exists() {
            if !root.is_dir() {
                bail!("{} exists and is not a directory", root.display());
            }
            let occupied = fs::read_dir(root)?.next().is_some();
            if occupied && !force {
                bail!("{} is not empty; pass --force to overwrite", root.display());
            }
        }
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn csv_writer(&self, name: &str) -> Result<BufWriter<fs::File>> {
        let p = self.path(name);
        Ok(BufWriter::new(fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }
}

/// Git-style object hash: `sha256("blob <len>\0" ++ content)`.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize)]
struct InputEntry {
    name: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct InputManifest {
    /// Hash over the sorted `sha256  name` lines of `inputs`.
    hash: String,
    inputs: Vec<InputEntry>,
}

fn input_files(cfg: &ExperimentConfig) -> Vec<PathBuf> {
    let mut files = Vec::new();
    match &cfg.data {
        DataSource::Blobs(_) => {}
        DataSource::Csv { train, test, .. } => files.extend([train.clone(), test.clone()]),
        DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
            files.extend([train_images.clone(), train_labels.clone(), test_images.clone(), test_labels.clone()])
        }
    }
    match &cfg.ood {
        OodSource::Csv { path } => files.push(path.clone()),
        OodSource::Idx { images } => files.push(images.clone()),
        OodSource::None | OodSource::Ring { .. } => {}
    }
    files
}

/// Writes the resolved config, the seed and the input hash manifest.
fn write_manifest(run: &RunDir, cfg: &ExperimentConfig, command: &str, checkpoint: Option<&Path>) -> Result<()> {
    let resolved = cfg.to_resolved_toml();
    run.write("config.toml", resolved.as_bytes())?;
    run.write("seed.txt", format!("{}\n", cfg.seed).as_bytes())?;
    let mut entries = vec![InputEntry { name: "config.toml".into(), bytes: resolved.len(), sha256: blob_hash(resolved.as_bytes()) }];
    let mut files = if command == "verify" { Vec::new() } else { input_files(cfg) };
    files.extend(checkpoint.map(Path::to_path_buf));
    for f in files {
        let bytes = fs::read(&f).with_context(|| format!("reading input {}", f.display()))?;
        entries.push(InputEntry { name: f.display().to_string(), bytes: bytes.len(), sha256: blob_hash(&bytes) });
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    let listing: String = entries.iter().map(|e| format!("{}  {}\n", e.sha256, e.name)).collect();
    run.write_json("inputs.json", &InputManifest { hash: blob_hash(listing.as_bytes()), inputs: entries })
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    loss: LossKind,
    architecture: Vec<usize>,
    epochs_run: usize,
    best_epoch: usize,
    stopped_early: bool,
    clipped_gradients: u64,
    best_val_loss: f64,
    best_val_acc: f64,
}

impl TrainSummary {
    fn new(loss: LossKind, net: &NetworkParams, record: &TrainRecord) -> Self {
        let best = &record.epochs[record.best_epoch - 1];
        Self {
            loss,
            architecture: net.layer_sizes(),
            epochs_run: record.epochs.len(),
            best_epoch: record.best_epoch,
            stopped_early: record.stopped_early,
            clipped_gradients: record.clipped_gradients,
            best_val_loss: best.val_loss,
            best_val_acc: best.val_acc,
        }
    }
}

pub fn cmd_train(cfg: &ExperimentConfig, run: &RunDir) -> Result<()> {
    write_manifest(run, cfg, "train", None)?;
    let prepared = experiment::prepare_data(cfg)?;
    let (net, record) = experiment::fit(cfg, &prepared.train, cfg.train.loss)?;
    net.save(&run.path(CHECKPOINT_FILE))?;
    record.write_csv(run.csv_writer("train_record.csv")?, cfg.wall_clock)?;
    run.write_json("train_summary.json", &TrainSummary::new(cfg.train.loss, &net, &record))?;
    log::info!("trained {} for {} epochs (best {})", cfg.train.loss, record.epochs.len(), record.best_epoch);
    Ok(())
}

fn checkpoint_path(cfg: &ExperimentConfig, flag: Option<&Path>) -> Result<PathBuf> {
    let p = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| anyhow!("missing checkpoint: pass --checkpoint or set eval.checkpoint"))?;
    if !p.is_file() {
        bail!("missing checkpoint: {} does not exist", p.display());
    }
    Ok(p)
}

fn load_model(cfg: &ExperimentConfig, run: &RunDir, command: &str, flag: Option<&Path>) -> Result<(NetworkParams, Prepared)> {
    let path = checkpoint_path(cfg, flag)?;
    write_manifest(run, cfg, command, Some(&path))?;
    let net = NetworkParams::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let prepared = experiment::prepare_data(cfg)?;
    experiment::check_checkpoint(cfg, &net, &prepared.train)?;
    Ok((net, prepared))
}

fn threshold(cfg: &ExperimentConfig, net: &NetworkParams) -> f64 {
    cfg.threshold_fraction * (net.num_classes() as f64).ln()
}

pub fn cmd_eval(cfg: &ExperimentConfig, run: &RunDir, checkpoint: Option<&Path>) -> Result<()> {
    let (net, prepared) = load_model(cfg, run, "eval", checkpoint)?;
    let reports = evaluation::evaluate(&net, &prepared.test)?;
    evaluation::write_reports_csv(&reports, run.csv_writer("reports.csv")?)?;
    let groups = evaluation::summarize_by_correctness(&reports, threshold(cfg, &net))?;
    run.write_json("eval_summary.json", &groups)?;
    log::info!("test accuracy {:.4}", groups.accuracy);
    Ok(())
}

pub fn cmd_ood(cfg: &ExperimentConfig, run: &RunDir, checkpoint: Option<&Path>) -> Result<()> {
    let (net, prepared) = load_model(cfg, run, "ood", checkpoint)?;
    let ood = experiment::prepare_ood(cfg, &prepared)?.ok_or_else(|| anyhow!("ood.source is `none`; nothing to evaluate"))?;
    let reports = evaluation::evaluate(&net, &ood)?;
    evaluation::write_reports_csv(&reports, run.csv_writer("ood_reports.csv")?)?;
    let summary = evaluation::ood_evaluate(&net, &ood, cfg.threshold_fraction)?;
    run.write_json("ood_summary.json", &summary)?;
    log::info!("OOD fraction above threshold {:.4}", summary.entropy.fraction_above_threshold);
    Ok(())
}

pub fn cmd_attack(cfg: &ExperimentConfig, run: &RunDir, checkpoint: Option<&Path>) -> Result<()> {
    let (net, prepared) = load_model(cfg, run, "attack", checkpoint)?;
    let bounds = experiment::attack_bounds(cfg, &prepared.test);
    let rows = evaluation::epsilon_sweep(&net, &prepared.test, &cfg.epsilons, &cfg.train.loss_config(), bounds, cfg.threshold_fraction)?;
    evaluation::write_sweep_csv(&rows, run.csv_writer("attack_sweep.csv")?)?;
    run.write_json("attack_summaries.json", &rows)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct VerifySummary {
    seed: u64,
    lemma1: bool,
    lemma2: bool,
    theorem1: bool,
    theorem2: bool,
    theorem3: bool,
    figure: bool,
    passed: bool,
}

/// Returns whether every check passed.
pub fn cmd_verify(cfg: &ExperimentConfig, run: &RunDir) -> Result<bool> {
    write_manifest(run, cfg, "verify", None)?;
    let r = verify::run_all(&cfg.verify)?;
    run.write_json("lemma1.json", &r.lemma1)?;
    run.write_json("lemma2.json", &r.lemma2)?;
    for t in [&r.theorem1, &r.theorem2, &r.theorem3] {
        run.write_json(&format!("{}.json", t.name), t)?;
        if let Some(s) = t.sweeps.first() {
            s.write_csv(run.csv_writer(&format!("{}_sweep.csv", t.name))?)?;
        }
    }
    run.write_json("figure.json", &r.figure)?;
    r.figure.write_csv(run.csv_writer("figure_sweep.csv")?)?;
    run.write_json(
        "verify_summary.json",
        &VerifySummary {
            seed: r.seed,
            lemma1: r.lemma1.verdict.passed,
            lemma2: r.lemma2.verdict.passed,
            theorem1: r.theorem1.passed,
            theorem2: r.theorem2.passed,
            theorem3: r.theorem3.passed,
            figure: r.figure.passed,
            passed: r.passed,
        },
    )?;
    Ok(r.passed)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub loss: LossKind,
    pub test_accuracy: f64,
    pub median_entropy_correct: Option<f64>,
    pub median_entropy_errors: Option<f64>,
    pub ood_median_entropy: Option<f64>,
    pub ood_fraction_above_threshold: Option<f64>,
    pub median_off_class_strength: f64,
    pub best_epoch: usize,
}

pub fn compare_row(cfg: &ExperimentConfig, loss: LossKind, net: &NetworkParams, record: &TrainRecord, test: &Dataset, ood: Option<&Dataset>) -> Result<CompareRow> {
    let reports = evaluation::evaluate(net, test)?;
    let groups = evaluation::summarize_by_correctness(&reports, threshold(cfg, net))?;
    let median = |s: &Option<DistributionSummary>| s.as_ref().map(|s| s.median);
    let ood_summary = ood.map(|o| evaluation::ood_evaluate(net, o, cfg.threshold_fraction)).transpose()?;
    let strength = evaluation::summarize(&evaluation::off_class_strength(net, test)?, 0.0)?;
    Ok(CompareRow {
        loss,
        test_accuracy: groups.accuracy,
        median_entropy_correct: median(&groups.successes_entropy),
        median_entropy_errors: median(&groups.errors_entropy),
        ood_median_entropy: ood_summary.as_ref().map(|s| s.entropy.median),
        ood_fraction_above_threshold: ood_summary.as_ref().map(|s| s.entropy.fraction_above_threshold),
        median_off_class_strength: strength.median,
        best_epoch: record.best_epoch,
    })
}

/// Trains one model per loss under the same seed and architecture.
pub fn cmd_compare(cfg: &ExperimentConfig, run: &RunDir, losses: &[LossKind]) -> Result<Vec<CompareRow>> {
    write_manifest(run, cfg, "compare", None)?;
    let prepared = experiment::prepare_data(cfg)?;
    let ood = experiment::prepare_ood(cfg, &prepared)?;
    let mut rows = Vec::with_capacity(losses.len());
    for &loss in losses {
        let (net, record) = experiment::fit(cfg, &prepared.train, loss)?;
        net.save(&run.path(&format!("checkpoint_{loss}.json")))?;
        record.write_csv(run.csv_writer(&format!("train_record_{loss}.csv"))?, cfg.wall_clock)?;
        rows.push(compare_row(cfg, loss, &net, &record, &prepared.test, ood.as_ref())?);
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(run.csv_writer("compare.csv")?);
    w.write_record([
        "loss",
        "test_accuracy",
        "median_entropy_correct",
        "median_entropy_errors",
        "ood_median_entropy",
        "ood_fraction_above_threshold",
        "median_off_class_strength",
        "best_epoch",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        w.write_record([
            r.loss.to_string(),
            r.test_accuracy.to_string(),
            opt(r.median_entropy_correct),
            opt(r.median_entropy_errors),
            opt(r.ood_median_entropy),
            opt(r.ood_fraction_above_threshold),
            r.median_off_class_strength.to_string(),
            r.best_epoch.to_string(),
        ])?;
    }
    w.flush()?;
    run.write_json("compare.json", &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_object_layout() {
        // sha256 of "blob 0\0"
        assert_eq!(blob_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }

    #[test]
    fn run_dir_refuses_non_empty() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "1").unwrap();
        assert!(RunDir::create(dir.path(), false).is_err());
        assert!(RunDir::create(dir.path(), true).is_ok());
        assert!(RunDir::create(&dir.path().join("fresh"), false).is_ok());
    }
}
