use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use cnv_assoc::pipeline::{cmd_merge_and_report, cmd_simulate, cmd_test, plot_path, PipelineConfig};
use cnv_assoc::simulation::ScenarioConfig;

#[derive(Parser)]
#[command(name = "cnvassoc", version, about = "Case/control CNV association testing on probe intensities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic case/control dataset with known CNV regions.
    Simulate {
        /// Scenario TOML; the desk-scale preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Test every bin for a case/control difference in copy-number proportions.
    Test(RunArgs),
    /// Merge bins into segments, re-test them and write a report plus plot data.
    Merge(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    control: PathBuf,
    /// Pipeline TOML; defaults for every field left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report TSV to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ScenarioConfig::from_toml(&text)?)
        }
        None => Ok(ScenarioConfig::default()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, out, seed } => {
            let mut scenario = load_scenario(config.as_deref())?;
            if let Some(s) = seed {
                scenario.seed = s;
            }
            cmd_simulate(&scenario, &out)?;
            eprintln!("wrote dataset to {}", out.display());
        }
        Command::Test(args) => {
            let cfg = args.pipeline_config()?;
            let reports = cmd_test(&args.case, &args.control, &cfg, &args.out)?;
            let significant = reports
                .iter()
                .filter(|r| r.outcomes.iter().any(|o| o.p_value < cfg.significance))
                .count();
            eprintln!(
                "{} bins tested, {} significant at {}; report in {}",
                reports.len(),
                significant,
                cfg.significance,
                args.out.display()
            );
        }
        Command::Merge(args) => {
            let cfg = args.pipeline_config()?;
            let segments = cmd_merge_and_report(&args.case, &args.control, &cfg, &args.out)?;
            eprintln!(
                "{} segments; report in {}, plot data in {}",
                segments.len(),
                args.out.display(),
                plot_path(&args.out).display()
            );
        }
    }
    Ok(())
}
