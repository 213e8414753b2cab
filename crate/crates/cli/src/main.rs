use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ifagg::harness::{builtin, parse_config, run_experiment, ExperimentConfig, BUILTINS};
use ifagg::scheduling::SchedulerKind;

#[derive(Parser)]
#[command(name = "ifagg", version, about = "Bandwidth aggregation experiments on a simulated multi-interface host")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in experiment.
    Run {
        experiment: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// List the built-in experiments and scheduler names.
    List,
    /// Run the experiment described by a configuration file.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Seed of the first run; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions per sweep point and scheduler.
    #[arg(long)]
    runs: Option<usize>,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to these schedulers (repeat or separate with commas).
    #[arg(long, value_delimiter = ',')]
    scheduler: Vec<String>,
    /// Accept sweep values outside the supported parameter ranges.
    #[arg(long)]
    force_range: bool,
}

impl RunOpts {
    fn apply(self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(runs) = self.runs {
            cfg.runs = runs;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        if !self.scheduler.is_empty() {
            cfg.schedulers = self
                .scheduler
                .iter()
                .map(|s| s.parse::<SchedulerKind>())
                .collect::<Result<_, _>>()?;
        }
        cfg.force_range |= self.force_range;
        Ok(())
    }
}

fn execute(mut cfg: ExperimentConfig, opts: RunOpts) -> Result<()> {
    opts.apply(&mut cfg)?;
    let table = run_experiment(&cfg)?;
    if cfg.out.is_none() {
        table.write_csv(io::stdout().lock())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::List => {
            println!("experiments:");
            for b in BUILTINS {
                println!("  {:<16} {}", b.name, b.about);
            }
            println!("schedulers:");
            for k in SchedulerKind::ALL {
                println!("  {}", k.name());
            }
            Ok(())
        }
        Command::Run { experiment, opts } => {
            let Some(cfg) = builtin(&experiment) else {
                let names: Vec<_> = BUILTINS.iter().map(|b| b.name).collect();
                bail!("unknown experiment `{experiment}` (available: {})", names.join(", "));
            };
            execute(cfg, opts)
        }
        Command::Simulate { config, opts } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = parse_config(&text).with_context(|| format!("in {}", config.display()))?;
            execute(cfg, opts)
        }
    }
}
