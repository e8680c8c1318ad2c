use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mudsense::config::ExperimentConfig;
use mudsense::harness::{self, exit_code, RunOptions};

#[derive(Parser)]
#[command(name = "mudsense", version, about = "Proprioceptive mud sensing and gait adaptation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario named in the config file.
    Run(Common),
    /// Run the config's parameter grid, one directory per cell.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    plots: Option<Toggle>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, is_sweep) = match &cli.command {
        Command::Run(a) => (a, false),
        Command::Sweep(a) => (a, true),
    };
    let cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("mudsense: {e}");
            return ExitCode::from(1);
        }
    };
    let opts =
        RunOptions { seed: args.seed, out: args.out.clone(), plots: args.plots.map(|t| matches!(t, Toggle::On)) };
    let outcome = if is_sweep {
        harness::sweep(&cfg, &opts).map(|rows| {
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            format!("sweep: {} cells, {failed} failed\n", rows.len())
        })
    } else {
        harness::run(&cfg, &opts).map(|s| s.render())
    };
    match outcome {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mudsense: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
