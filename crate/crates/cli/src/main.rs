use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eegtext_core::config::RunConfig;
use eegtext_core::evalsuite::{mean_std, MetricRecord};
use eegtext_core::pipeline::{self, ABLATION_ROWS, CHECKPOINT_FILE};
use eegtext_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "eegtext",
    version,
    about = "EEG-report contrastive alignment on synthetic montages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long, env = "EEGTEXT_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint to evaluate; defaults to the one inside --out.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData(Common),
    /// Train and keep the best-validation checkpoint.
    Train(Common),
    /// Zero-shot, linear-probe and prompt-similarity metrics.
    Eval(Common),
    /// EEG-to-report retrieval precision.
    Retrieve(Common),
    /// Component ablations on the shifted-montage benchmark.
    Ablate(Common),
    /// Channel embedding dump and cosine matrices.
    Diagnose(Common),
    /// Finite-difference check of the training objective.
    Gradcheck(Common),
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(common: &Common, config: &RunConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| config.paths.out.clone())
}

fn checkpoint(common: &Common, out: &Path) -> PathBuf {
    common.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE))
}

fn print_records(records: &[MetricRecord]) {
    for r in records {
        let k = r.k.map(|k| format!("@{k}")).unwrap_or_default();
        let metric = format!("{}{k}", r.metric.as_str());
        println!("{:<14} {:<20} {metric:<22} {:.4}", r.task, r.method, r.value);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(c) => {
            let mut config = load_config(&c)?;
            if let Some(seed) = c.seed {
                config.data.seed = seed;
            }
            let out = c.out.clone().unwrap_or_else(|| config.paths.corpus.clone());
            println!("{}", pipeline::cmd_gen_data(&config, &out, c.force)?);
        }
        Command::Train(c) => {
            let config = load_config(&c)?;
            let seed = c.seed.unwrap_or(config.train.seed);
            let out = out_dir(&c, &config);
            if out.join(CHECKPOINT_FILE).exists() && !c.force {
                return Err(Error::Config(format!(
                    "{} already holds a checkpoint; pass --force to overwrite",
                    out.display()
                )));
            }
            let art = pipeline::cmd_train(&config, &config.paths.corpus, &out, seed)?;
            let last = art.outcome.curve.last().map(|p| p.loss).unwrap_or(f64::NAN);
            println!(
                "trained {} steps, final loss {last:.4}, best epoch {:?}; checkpoint {}",
                art.outcome.curve.len(),
                art.outcome.best_epoch,
                art.checkpoint.display()
            );
        }
        Command::Eval(c) => {
            let config = load_config(&c)?;
            let out = out_dir(&c, &config);
            let seed = c.seed.unwrap_or(config.train.seed);
            let report = pipeline::cmd_eval(&config, &config.paths.corpus, &checkpoint(&c, &out), &out, seed)?;
            print_records(&report.records);
        }
        Command::Retrieve(c) => {
            let config = load_config(&c)?;
            let out = out_dir(&c, &config);
            let seed = c.seed.unwrap_or(config.train.seed);
            let records = pipeline::cmd_retrieve(&config, &config.paths.corpus, &checkpoint(&c, &out), &out, seed)?;
            print_records(&records);
        }
        Command::Ablate(c) => {
            let mut config = load_config(&c)?;
            if let Some(seed) = c.seed {
                config.eval.seeds = vec![seed];
            }
            let out = out_dir(&c, &config);
            let runs = pipeline::cmd_ablate(&config, &config.paths.corpus, &out)?;
            for (row, ..) in ABLATION_ROWS {
                let means: Vec<f64> = runs.iter().filter(|r| r.row == row).map(|r| r.mean_shifted()).collect();
                let (m, s) = mean_std(&means);
                println!("{row:<14} shifted-montage balanced accuracy {m:.4} ± {s:.4}");
            }
        }
        Command::Diagnose(c) => {
            let config = load_config(&c)?;
            let out = out_dir(&c, &config);
            let seed = c.seed.unwrap_or(config.train.seed);
            let d = pipeline::cmd_diagnose(&config, &config.paths.corpus, &checkpoint(&c, &out), &out, seed)?;
            println!(
                "channel separation: within {:.4}, between {:.4}, gap {:.4}",
                d.separation.within, d.separation.between, d.separation.gap
            );
        }
        Command::Gradcheck(c) => {
            let config = load_config(&c)?;
            let seed = c.seed.unwrap_or(0);
            let reports = pipeline::cmd_gradcheck(&config, seed, 20)?;
            let mut failed = false;
            for (i, r) in reports.iter().enumerate() {
                println!(
                    "seed {:>3}: max relative error {:.3e} over {} coordinates {}",
                    seed + i as u64,
                    r.max_rel_error,
                    r.checked,
                    if r.pass { "ok" } else { "FAIL" }
                );
                failed |= !r.pass;
            }
            if failed {
                return Err(Error::Numerical("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
