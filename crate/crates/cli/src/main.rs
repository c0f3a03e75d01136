use std::path::PathBuf;
use std::process::ExitCode;

use brainalign::corpus::CorpusKind;
use brainalign_cli::config::{CorpusSource, DATA_ROOT_VAR};
use brainalign_cli::{run, Command, RunConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "brainalign", version, about = "Layer-wise brain alignment and probing for speech models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output registry directory.
    #[arg(long)]
    out: PathBuf,
    /// Root seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    TimitLike,
    CommandsLike,
}

#[derive(Subcommand)]
enum Cmd {
    /// Slice stories into snippets and align snippet features to the fMRI grid.
    Pair(Common),
    /// Fit voxelwise ridge encoding models per layer and participant.
    Encode(Common),
    /// Estimate noise ceilings and aggregate normalized alignment by region.
    Ceiling(Common),
    /// Run linear probes per layer and task.
    Probe(Common),
    /// Convert a raw corpus listing into probe label files.
    ImportCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        /// Raw corpus manifest.
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Build layer curves, trend labels and figures.
    Report(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common, corpus) = match cli.command {
        Cmd::Pair(c) => (Command::Pair, c, None),
        Cmd::Encode(c) => (Command::Encode, c, None),
        Cmd::Ceiling(c) => (Command::Ceiling, c, None),
        Cmd::Probe(c) => (Command::Probe, c, None),
        Cmd::Report(c) => (Command::Report, c, None),
        Cmd::ImportCorpus { common, kind, raw } => (Command::ImportCorpus, common, Some((kind, raw))),
    };
    let data_root = std::env::var_os(DATA_ROOT_VAR).map(PathBuf::from);
    let cfg = match &common.config {
        Some(path) => match RunConfig::load(path, data_root.as_deref()) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: config: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    let mut cfg = cfg.with_overrides(common.seed, common.workers);
    if let Some((kind, raw)) = corpus {
        let current = cfg.corpus.take();
        let kind = kind
            .map(|k| match k {
                Kind::TimitLike => CorpusKind::TimitLike,
                Kind::CommandsLike => CorpusKind::CommandsLike,
            })
            .or(current.as_ref().map(|c| c.kind));
        let raw = raw.or(current.as_ref().map(|c| c.raw.clone()));
        cfg.corpus = match (kind, raw) {
            (Some(kind), Some(raw)) => Some(CorpusSource {
                kind,
                raw,
                test_fraction: current.map_or(0.2, |c| c.test_fraction),
            }),
            _ => None,
        };
    }
    match run(command, &cfg, &common.out) {
        Ok(files) => {
            log::info!("wrote {} output(s) under {}", files.len(), common.out.display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
