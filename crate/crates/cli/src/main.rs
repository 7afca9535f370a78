use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ucbpe::benchmarks::TASKS;
use ucbpe::harness::{
    aggregate_runs, curves_from_trace, read_runs, read_trace, write_summary, write_text, BoundReport, Experiment,
    ExperimentConfig,
};
use ucbpe::strategy::Policy;

#[derive(Parser)]
#[command(name = "ucbpe", version, about = "Batch Bayesian optimization experiments")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every repetition of an experiment and write its CSV files.
    Run {
        /// TOML experiment description.
        #[arg(long)]
        config: PathBuf,
        /// Override the number of repetitions.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the configured one).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the policy: ucb_pe, gp_bucb, sequential_ucb or random.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Rebuild a summary from a run directory's trace.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report regret-bound and deviation-chain verdicts for a run directory.
    BoundCheck {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// List the built-in tasks.
    ListTasks,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::Run {
            config,
            reps,
            seed,
            out,
            strategy,
        } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(r) = reps {
                cfg.run.repetitions = r;
            }
            if let Some(s) = seed {
                cfg.run.base_seed = s;
            }
            if let Some(name) = strategy {
                cfg.strategy.policy = name.parse::<Policy>()?;
            }
            let Some(dir) = out.or_else(|| cfg.run.output_dir.clone()) else {
                bail!("no output directory: pass --out or set run.output_dir");
            };
            cfg.run.output_dir = Some(dir.clone());
            let experiment = Experiment::new(cfg)?;
            let result = experiment.sweep();
            result.write(&dir)?;
            write_text(&dir.join("config.toml"), &experiment.config().to_toml()?)?;
            let failed = result.records.iter().filter(|r| !r.metrics.is_ok()).count();
            if let Some(last) = result.summary.last() {
                println!(
                    "{} repetitions ({failed} failed); final mean best-so-far regret {:.6e} ± {:.3e}",
                    result.records.len(),
                    last.mean_best_so_far,
                    last.best_ci_halfwidth
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Aggregate { input, out } => {
            let rows = read_trace(&input.join("trace.csv"))?;
            let summary = aggregate_runs(&curves_from_trace(&rows));
            write_summary(&out, &summary)?;
            println!("wrote {} rows to {}", summary.rows.len(), out.display());
        }
        Command::BoundCheck { input } => {
            let runs = read_runs(&input.join("runs.csv"))?;
            println!("{}", BoundReport::from_runs(&runs));
        }
        Command::ListTasks => {
            for (name, description) in TASKS {
                println!("{name:<18} {description}");
            }
        }
    }
    Ok(())
}
