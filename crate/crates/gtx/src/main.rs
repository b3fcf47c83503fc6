use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gtx::{run, Command, ExperimentSpec};

/// Graph transformer experiments: convergence curves, transferability
/// grids, ablations, terrain distances, gradient checks.
#[derive(Parser, Debug)]
#[command(name = "gtx", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML config; optional for gradcheck and selftest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact directory, created empty unless --resume.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the root seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to GTX_THREADS, then the core count.
    #[arg(long)]
    threads: Option<usize>,
    /// Continue an interrupted run in --out with an identical config.
    #[arg(long)]
    resume: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let spec = ExperimentSpec {
        command: cli.command,
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        threads: cli.threads,
        resume: cli.resume,
    };
    match run(&spec) {
        Ok(o) => {
            print!("{}", o.summary);
            println!("artifacts: {}", spec.out.display());
            if o.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: checks failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
