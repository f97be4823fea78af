use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use setbellman::cli::{exit_status, run_file, Overrides};

/// Solve interval MDPs and simulate single-controller games from a JSON config.
#[derive(Parser)]
#[command(name = "setbellman", version)]
struct Args {
    /// Config file holding one experiment object or a list of them.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides { seed: args.seed, epsilon: args.epsilon, out: args.out };
    let results = run_file(&args.config, &overrides);
    for r in &results {
        match r {
            Ok(rep) if !args.quiet => {
                let status = if rep.completed { "ok" } else { "partial" };
                println!("{status} {}: {} file(s)", rep.name, rep.files.len());
                for f in &rep.files {
                    println!("  {}", f.display());
                }
            }
            Ok(_) => {}
            Err(e) => eprintln!("error: {e}"),
        }
    }
    ExitCode::from(exit_status(&results) as u8)
}
