use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdemap_cli::commands::{self, Context, Options};
use sdemap_cli::CliError;

#[derive(Parser)]
#[command(name = "sdemap", version, about = "MAP and minimum-energy estimation experiments for SDE systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides $SDEMAP_OUT_DIR and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory and its measurements.
    Simulate(Common),
    /// Run the configured estimators on a dataset CSV.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Simulate and estimate a batch of replicates.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Mesh-refinement and fixed-path functional tables.
    Convergence(Common),
}

fn options(c: Common) -> Options {
    Options { config: c.config, out: c.out, seed_override: c.seed_override, ..Options::default() }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate(c) => commands::simulate(&Context::new(&options(c))?),
        Command::Estimate { common, dataset } => {
            let ctx = Context::new(&options(common))?;
            let report = commands::estimate_cmd(&ctx, &dataset)?;
            for (label, e) in &report.errors {
                eprintln!("{label}: {e}");
            }
            Ok(())
        }
        Command::Montecarlo { common, workers } => {
            let ctx = Context::new(&options(common))?;
            let r = commands::montecarlo(&ctx, workers)?;
            eprintln!("{} of {} replicates completed", r.completed, r.replicates);
            Ok(())
        }
        Command::Convergence(c) => commands::convergence(&Context::new(&options(c))?).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
