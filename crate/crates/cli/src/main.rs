//! `homoscale` command-line harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use homoscale::config::ExperimentConfig;
use homoscale::harness::{self, exit_code};
use homoscale::report::EnsembleReport;
use homoscale::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "homoscale", version, about = "Homogenization experiments for parabolic equations with random-in-time microstructure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Time-scale exponent; overrides every alpha in the config.
    #[arg(long, global = true)]
    alpha: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Corrector residuals, degenerate limits, Z cancellation and initial-layer decay.
    Audit,
    /// Effective coefficients and drift constants.
    Effective,
    /// Homogenization rate over the epsilon ladder.
    Rate,
    /// Law of the normalized fluctuation against the limit SPDE.
    Law,
    /// Invariance-principle estimate of Lambda.
    Invariance,
    /// Merge JSON summaries.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Grid and cost per epsilon.
    Advise,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(a) = cli.alpha {
        cfg.override_alpha(a)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<EnsembleReport> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    harness::env_budget()?;
    if let Command::Report { inputs } = &cli.command {
        let paths: Vec<&std::path::Path> = inputs.iter().map(PathBuf::as_path).collect();
        let merged = harness::cmd_report(&paths)?;
        merged.write(&cli.out.clone().unwrap_or_else(|| PathBuf::from("out")))?;
        return Ok(merged);
    }
    let cfg = load(cli)?;
    let report = match cli.command {
        Command::Audit => harness::cmd_audit(&cfg)?,
        Command::Effective => harness::cmd_effective(&cfg)?,
        Command::Rate => harness::cmd_rate(&cfg)?,
        Command::Law => harness::cmd_law(&cfg)?,
        Command::Invariance => harness::cmd_invariance(&cfg)?,
        Command::Advise => harness::cmd_advise(&cfg)?,
        Command::Report { .. } => unreachable!(),
    };
    report.write(&cfg.out.clone().unwrap_or_else(|| PathBuf::from("out")))?;
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            for v in &report.verdicts {
                println!("{} {} [{}] {}: {} ({})", if v.passed { "PASS" } else { "FAIL" }, v.criterion.id(), v.criterion.name(), v.check, v.value, v.tolerance);
            }
            for n in &report.notes {
                println!("note: {n}");
            }
            ExitCode::from(if report.passed() { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
