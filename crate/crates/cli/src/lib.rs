//! Command-line pipeline: pairing, encoding, noise ceilings, probing,
//! corpus import and reporting over a filesystem registry.
//!
//! Every command reads its inputs from the config and from earlier stage
//! outputs under `--out`, and writes its own outputs there atomically.

pub mod config;
pub mod layout;
pub mod stages;

use std::fmt;
use std::path::{Path, PathBuf};

use brainalign::Error;
use rayon::prelude::*;

pub use config::RunConfig;
pub use layout::Layout;

/// A library error with the pipeline context it occurred in.
#[derive(Debug)]
pub struct Failure {
    pub context: String,
    pub error: Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.context.is_empty() {
            write!(f, "{}", self.error)
        } else {
            write!(f, "{}: {}", self.context, self.error)
        }
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure {
            context: String::new(),
            error,
        }
    }
}

impl Failure {
    /// 2 for bad or missing inputs, 1 for computation failures.
    pub fn exit_code(&self) -> i32 {
        if self.error.is_input_error() {
            2
        } else {
            1
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for Result<T, Error> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|error| Failure { context: what(), error })
    }
}

impl<T> Context<T> for CliResult<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|f| Failure {
            context: if f.context.is_empty() { what() } else { format!("{}: {}", what(), f.context) },
            error: f.error,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Pair,
    Encode,
    Ceiling,
    Probe,
    ImportCorpus,
    Report,
}

/// Runs `f` over `jobs` on a pool of `workers` threads. Results come back
/// in job order and the first failing job (in job order) wins, so the
/// outcome does not depend on scheduling.
pub fn run_jobs<J, R, F>(workers: usize, jobs: &[J], f: F) -> CliResult<Vec<R>>
where
    J: Sync,
    R: Send,
    F: Fn(&J) -> CliResult<R> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Failure {
            context: "worker pool".into(),
            error: Error::Config(e.to_string()),
        })?;
    pool.install(|| jobs.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

/// Runs one subcommand with a fully resolved config. Returns the files it
/// wrote.
pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate().context(|| "config".into())?;
    let layout = Layout::new(out);
    match command {
        Command::Pair => stages::pair(cfg, &layout),
        Command::Encode => stages::encode(cfg, &layout),
        Command::Ceiling => stages::ceiling(cfg, &layout),
        Command::Probe => stages::probe(cfg, &layout),
        Command::ImportCorpus => stages::import_corpus(cfg, &layout),
        Command::Report => stages::report(cfg, &layout),
    }
}
