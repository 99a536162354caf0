use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ensemble_uq::experiment::{self, ExperimentConfig, RunOptions};

/// Train and evaluate neural-network ensembles on synthetic shape images.
#[derive(Parser)]
#[command(name = "ensemble-uq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and write it as a binary container.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory for `dataset.bin` and `dataset.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every (model, seed) cell and write reports.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Serialise timed sections across worker threads.
        #[arg(long)]
        exclusive_timing: bool,
        /// Worker threads for independent cells (overrides `jobs`).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Recompute DQ_β from stored diversities without retraining.
    SweepBeta {
        /// Experiment output directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated β values; defaults to the experiment's list.
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        /// Only accept results produced by this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rebuild the aggregate tables of an experiment directory.
    Report {
        #[command(flatten)]
        config: ConfigArgs,
        /// Experiment output directory to re-aggregate.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the config's seed list, e.g. `7` or `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seed_override: Vec<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if !self.seed_override.is_empty() {
            cfg.seeds = self.seed_override.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn given(&self) -> bool {
        self.config.is_some() || !self.seed_override.is_empty()
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = config.load()?;
            let s = experiment::generate(&cfg, &out)?;
            println!(
                "wrote {}: {} train, {} validation, {} ID test, {} OOD test images of {} pixels",
                out.join("dataset.bin").display(),
                s.train,
                s.validation,
                s.id_test,
                s.ood_test,
                s.pixels
            );
        }
        Command::Run { config, out, exclusive_timing, jobs } => {
            let mut cfg = config.load()?;
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            let outcome = experiment::run(&cfg, &RunOptions { out, exclusive_timing })?;
            let failed: Vec<_> = outcome.log.failures().collect();
            for f in &failed {
                eprintln!("cell {} seed {} failed: {}", f.model, f.seed, f.error.as_deref().unwrap_or("unknown"));
            }
            if let Some(summary) = &outcome.summary {
                println!("{:<14} {:>9} {:>15} {:>15} {:>15} {:>10}", "model", "params", "accuracy", "NLL", "DQ_1", "cost");
                for m in &summary.models {
                    let cost = m.weighted_cost.map_or("-".to_string(), |(c, _)| format!("{c:.3}"));
                    println!(
                        "{:<14} {:>9} {:>7.4}±{:<7.4} {:>7.4}±{:<7.4} {:>7.4}±{:<7.4} {:>10}",
                        m.model, m.parameter_count, m.id_accuracy.0, m.id_accuracy.1, m.id_nll.0, m.id_nll.1, m.dq1.0, m.dq1.1, cost
                    );
                }
            }
            println!("results in {}", outcome.out.display());
            if !failed.is_empty() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::SweepBeta { out, betas, config } => {
            let (manifest, reports) = experiment::load_reports(&out)?;
            if let Some(path) = &config {
                let expected = load_config(path)?.hash()?;
                if expected != manifest.config_hash {
                    bail!("{} holds results of config {}, not {}", out.display(), manifest.config_hash, expected);
                }
            }
            let betas = if betas.is_empty() { manifest.config.betas.clone() } else { betas };
            if betas.iter().any(|b| !(*b > 0.0)) {
                bail!("β values must be positive");
            }
            let csv = experiment::sweep_beta(&reports, &betas)?;
            let path = out.join("dq_beta_sweep.csv");
            std::fs::write(&path, format!("# config_hash: {}\n{csv}", manifest.config_hash))
                .with_context(|| format!("writing {}", path.display()))?;
            print!("{csv}");
        }
        Command::Report { config, out } => {
            let expected = if config.given() { Some(config.load()?.hash()?) } else { None };
            let summary = experiment::report(&out, expected.as_deref())?;
            for file in &summary.files {
                println!("{}", file.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
