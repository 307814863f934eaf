use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nano_core::harness::{self, format_summary, summarize, OutputFormat, RunConfig, ScenarioKind};
use nano_core::FilterKind;

#[derive(Parser)]
#[command(name = "nano-bench", version, about = "Seeded Monte Carlo benchmarks for Gaussian filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run trials and write per-trial results.
    Run(RunArgs),
    /// Run the invariant suite; exits nonzero if any check fails.
    Validate,
}

#[derive(Parser)]
struct RunArgs {
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    /// Comma-separated filter ids.
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<FilterKind>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
    /// JSON file with RunConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Leave the timing column empty so output is reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_json_file(path).with_context(|| format!("reading {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.scenario {
            c.scenario = v;
        }
        if let Some(v) = self.filters {
            c.filters = v;
        }
        if let Some(v) = self.trials {
            c.trials = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.horizon {
            c.horizon = v;
        }
        if self.out.is_some() {
            c.out = self.out;
        }
        if let Some(v) = self.format {
            c.format = v;
        }
        if self.no_timing {
            c.timing = false;
        }
        Ok(c)
    }
}

fn run(args: RunArgs) -> Result<()> {
    let config = args.into_config()?;
    let results = harness::run_trials(&config)?;
    match &config.out {
        Some(path) => {
            harness::write_results(&results, path, config.format).with_context(|| format!("writing {}", path.display()))?
        }
        None => harness::write_results_to(&results, std::io::stdout().lock(), config.format)?,
    }
    eprint!("{}", format_summary(&summarize(&results)));
    Ok(())
}

fn validate() -> bool {
    let mut ok = true;
    for c in harness::validate() {
        println!("{:<24} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
        ok &= c.passed;
    }
    ok
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
        Command::Validate => {
            if validate() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
