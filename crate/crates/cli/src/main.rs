use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmj_cli::{run, ExperimentKind, Overrides};

#[derive(Parser)]
#[command(name = "cmj", version, about = "Interacting CMJ branching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the limit equation and tabulate b(t), |u_t| and u_t(a).
    Solve(Common),
    /// Run the interacting simulator for every N.
    Simulate(Common),
    /// Estimate the mean age density of the non-linear process.
    Nonlinear(Common),
    /// Run the coupled construction and audit the domination property.
    Couple(Common),
    /// Simulate the dominating immigration process and its bounds.
    Immigration(Common),
    /// Extract birth chains and fit parent delays to the kernel.
    Chains(Common),
    /// Tabulate sup-distances to the limit across N.
    Convergence(Common),
    /// Run the experiment kind named in the config.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; must not exist.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Solve(c) => (Some(ExperimentKind::Solve), c),
        Command::Simulate(c) => (Some(ExperimentKind::Simulate), c),
        Command::Nonlinear(c) => (Some(ExperimentKind::Nonlinear), c),
        Command::Couple(c) => (Some(ExperimentKind::Couple), c),
        Command::Immigration(c) => (Some(ExperimentKind::Immigration), c),
        Command::Chains(c) => (Some(ExperimentKind::Chains), c),
        Command::Convergence(c) => (Some(ExperimentKind::Convergence), c),
        Command::Run(c) => (None, c),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            eprintln!("error: invalid --threads: must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let overrides = Overrides {
        kind,
        seed: common.seed,
    };
    match run(&common.config, &common.out, &overrides) {
        Ok(manifest) => {
            println!("{} -> {}", manifest.kind.name(), common.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
