use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smd::harness::{run, Command, Options};

#[derive(Parser)]
#[command(
    name = "smd",
    version,
    about = "Sparse mutation decompositions for fine tuning trained networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the parent and write a checkpoint
    Train(Common),
    /// Grid search for (sigma, rho) near the KL target
    Search(Common),
    /// Spawn, select and combine mutated children
    Evolve(Common),
    /// Export decision-boundary lattices for a (sigma, rho) grid
    Boundary(Common),
    /// Ablation sweep over sigma, rho and subspace mode
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Output directory; SMD_OUT takes precedence
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every child's mask as run-length text (evolve)
    #[arg(long)]
    dump_masks: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Search(a) => (Command::Search, a),
        Cmd::Evolve(a) => (Command::Evolve, a),
        Cmd::Boundary(a) => (Command::Boundary, a),
        Cmd::Ablate(a) => (Command::Ablate, a),
    };
    let opts = Options {
        workers: args.workers,
        repeats: args.repeats,
        out: args.out,
        dump_masks: args.dump_masks,
    };
    match run(cmd, &args.config, &opts) {
        Ok(outcome) => {
            for line in outcome.lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("smd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
