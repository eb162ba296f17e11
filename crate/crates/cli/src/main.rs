use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use iad_cli::commands::{self, RunDir};
use iad_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "iad", version, about = "Dirichlet uncertainty networks: training, evaluation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus the per-epoch record.
    Train(Common),
    /// Per-example uncertainty on the test split.
    Eval(WithCheckpoint),
    /// Uncertainty summaries on the out-of-distribution set.
    Ood(WithCheckpoint),
    /// FGSM sweep over `attack.epsilons`.
    Attack(WithCheckpoint),
    /// Numerical checks of the loss and regularizer properties.
    Verify(Common),
    /// Train one model per loss and tabulate their metrics.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Losses to compare; defaults to `compare.losses`.
        #[arg(long, value_delimiter = ',')]
        losses: Option<Vec<String>>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Write into a non-empty run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Overrides `eval.checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn setup(common: &Common, default_dir: &str) -> Result<(ExperimentConfig, RunDir)> {
    let text = std::fs::read_to_string(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    let mut cfg = ExperimentConfig::parse(&text).with_context(|| format!("in {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let dir = common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from(default_dir));
    let run = RunDir::create(&dir, common.force)?;
    Ok((cfg, run))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(c) => {
            let (cfg, run) = setup(&c, "runs/train")?;
            commands::cmd_train(&cfg, &run)?;
        }
        Command::Eval(c) => {
            let (cfg, run) = setup(&c.common, "runs/eval")?;
            commands::cmd_eval(&cfg, &run, c.checkpoint.as_deref())?;
        }
        Command::Ood(c) => {
            let (cfg, run) = setup(&c.common, "runs/ood")?;
            commands::cmd_ood(&cfg, &run, c.checkpoint.as_deref())?;
        }
        Command::Attack(c) => {
            let (cfg, run) = setup(&c.common, "runs/attack")?;
            commands::cmd_attack(&cfg, &run, c.checkpoint.as_deref())?;
        }
        Command::Verify(c) => {
            let (cfg, run) = setup(&c, "runs/verify")?;
            let passed = commands::cmd_verify(&cfg, &run)?;
            if !passed {
                eprintln!("verification failed; see verify_summary.json");
            }
            return Ok(passed);
        }
        Command::Compare { common, losses } => {
            let (cfg, run) = setup(&common, "runs/compare")?;
            let losses = match losses {
                Some(l) => l.iter().map(|s| s.parse().map_err(|_| anyhow::anyhow!("unknown loss `{s}`"))).collect::<Result<Vec<_>>>()?,
                None => cfg.compare_losses.clone(),
            };
            for row in commands::cmd_compare(&cfg, &run, &losses)? {
                println!("{}\taccuracy={:.4}", row.loss, row.test_accuracy);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IAD_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
