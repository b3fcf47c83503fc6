//! One module per experiment command. Each writes its result files into
//! the run directory; [`run`] then adds the report and the `MANIFEST`.

use std::path::PathBuf;
use std::time::Instant;

use gtx_core::train::Clock;

use crate::artifacts::{pool, thread_count, RunDir};
use crate::config::{echo, load_config, CommandConfig};
use crate::error::Result;
use crate::manifest::write_manifest;
use crate::report::emit_report;

pub mod ablation;
pub mod convergence;
pub mod gradcheck;
pub mod grid;
pub mod selftest;
pub mod terrain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Convergence,
    TransferGrid,
    Ablation,
    Terrain,
    Gradcheck,
    Selftest,
}

/// A parsed command line.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub command: Command,
    /// Optional for `gradcheck` and `selftest`, which have usable defaults.
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub resume: bool,
}

/// What a finished command reports back to `main`.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub summary: String,
    /// False when the command ran but its own checks failed.
    pub passed: bool,
}

/// Seconds since construction.
#[derive(Clone, Copy, Debug)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Everything a command body needs.
pub struct Context<C> {
    pub cfg: C,
    pub dir: RunDir,
    pub pool: rayon::ThreadPool,
    pub clock: WallClock,
}

fn open<C: CommandConfig>(spec: &ExperimentSpec) -> Result<Context<C>> {
    let needs_config = !matches!(spec.command, Command::Gradcheck | Command::Selftest);
    if needs_config && spec.config.is_none() {
        return Err(crate::error::CliError::Usage("this command needs --config <path>".into()));
    }
    let cfg: C = load_config(spec.config.as_deref(), spec.seed)?;
    let dir = RunDir::open(&spec.out, &echo(&cfg)?, spec.resume)?;
    Ok(Context {
        cfg,
        dir,
        pool: pool(thread_count(spec.threads)?)?,
        clock: WallClock::start(),
    })
}

/// Runs a command end to end. Checks that fail inside a command give
/// `passed = false`; an unusable config, I/O failure or empty result is
/// an error.
pub fn run(spec: &ExperimentSpec) -> Result<Outcome> {
    let (dir, passed) = match spec.command {
        Command::Convergence => {
            let cx = open(spec)?;
            convergence::run(&cx)?;
            (cx.dir, true)
        }
        Command::TransferGrid => {
            let cx = open(spec)?;
            grid::run(&cx)?;
            (cx.dir, true)
        }
        Command::Ablation => {
            let cx = open(spec)?;
            ablation::run(&cx)?;
            (cx.dir, true)
        }
        Command::Terrain => {
            let cx = open(spec)?;
            terrain::run(&cx)?;
            (cx.dir, true)
        }
        Command::Gradcheck => {
            let cx = open(spec)?;
            let ok = gradcheck::run(&cx)?;
            (cx.dir, ok)
        }
        Command::Selftest => {
            let cx = open(spec)?;
            let ok = selftest::run(&cx)?;
            (cx.dir, ok)
        }
    };
    write_manifest(&dir.path)?;
    let report = emit_report(&dir.path);
    write_manifest(&dir.path)?;
    Ok(Outcome {
        summary: report?,
        passed,
    })
}
