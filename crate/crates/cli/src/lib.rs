//! Command-line front end for building, querying, benchmarking and
//! analysing SkipDisk indexes.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{RunConfig, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<skipdisk::Error> for CliError {
    fn from(e: skipdisk::Error) -> Self {
        use skipdisk::Error as E;
        match e {
            E::InvalidParameter(_) => CliError::Config(e.to_string()),
            E::Format(_) | E::NonFinite(_) | E::DimensionMismatch { .. } | E::VersionMismatch { .. } | E::InvalidId { .. } => {
                CliError::Data(e.to_string())
            }
            E::Io(_) | E::NotResident(_) | E::QueueFull(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "skipdisk", version, about = "Disk-resident ANN search with lower-bound read skipping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic fvecs dataset.
    Gen(GenArgs),
    /// Split a dataset into base and query files.
    Split(SplitArgs),
    /// Brute-force ground truth as ivecs.
    Truth(Common),
    /// Build an index and its vector store.
    Build(Common),
    /// Run queries and print neighbors with per-query stats.
    Search(Common),
    /// Latency/recall/read counts over an L sweep, as text and JSON lines.
    Bench(BenchArgs),
    /// Lower-bound tightness and estimation multiplier reports.
    Analyze(AnalyzeArgs),
    /// PCA prefix length explaining a variance fraction.
    Dims(DimsArgs),
}

/// Settings shared by every command; each maps to a config key.
#[derive(Debug, Default, Args)]
pub struct Common {
    /// key = value config file (supports `include = path`)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub queries: Option<String>,
    #[arg(long)]
    pub truth: Option<String>,
    /// Index file to read
    #[arg(long)]
    pub index: Option<String>,
    /// Vector store file (default: <index>.vectors)
    #[arg(long)]
    pub store: Option<String>,
    /// base | pb | pbc | est (repeatable for bench)
    #[arg(long)]
    pub variant: Vec<String>,
    #[arg(long)]
    pub k: Option<String>,
    /// Search-list size (repeatable for bench)
    #[arg(long)]
    pub l: Vec<String>,
    /// Maximum in-flight reads
    #[arg(long)]
    pub b: Option<String>,
    #[arg(long)]
    pub dlb: Option<String>,
    #[arg(long)]
    pub ddade: Option<String>,
    #[arg(long)]
    pub dpq: Option<String>,
    #[arg(long = "r")]
    pub r: Option<String>,
    #[arg(long)]
    pub l_build: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub keep_fraction: Option<String>,
    #[arg(long)]
    pub ps: Option<String>,
    /// Override the calibrated estimation multiplier
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// real | sim
    #[arg(long)]
    pub io: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub dim: usize,
    /// gaussian | clustered
    #[arg(long, default_value = "gaussian")]
    pub model: String,
    #[arg(long, default_value_t = 16)]
    pub clusters: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Number of query rows
    #[arg(long)]
    pub nq: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Also report the synchronous one-read-per-hop baseline
    #[arg(long)]
    pub baseline: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Comma-separated prefix lengths (default: D/8, D/4, D/2, D)
    #[arg(long)]
    pub prefixes: Option<String>,
    #[arg(long, default_value_t = 20_000)]
    pub pairs: usize,
    /// Comma-separated multipliers for the I/O sweep
    #[arg(long, default_value = "1.0,0.9,0.8,0.7,0.6")]
    pub eps: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DimsArgs {
    #[arg(long, default_value_t = 0.8)]
    pub fraction: f64,
    #[command(flatten)]
    pub common: Common,
}

impl Common {
    /// Config file, then environment, then flags.
    pub fn resolve<I: IntoIterator<Item = (String, String)>>(&self, env: I) -> Result<RunConfig, CliError> {
        let mut s = Settings::default();
        if let Some(p) = &self.config {
            s.load_file(p)?;
        }
        s.apply_env(env)?;
        let single = [
            ("dataset", &self.dataset),
            ("queries", &self.queries),
            ("truth", &self.truth),
            ("index", &self.index),
            ("store", &self.store),
            ("k", &self.k),
            ("b", &self.b),
            ("dlb", &self.dlb),
            ("ddade", &self.ddade),
            ("dpq", &self.dpq),
            ("r", &self.r),
            ("l_build", &self.l_build),
            ("alpha", &self.alpha),
            ("keep_fraction", &self.keep_fraction),
            ("ps", &self.ps),
            ("epsilon", &self.epsilon),
            ("seed", &self.seed),
            ("io", &self.io),
            ("threads", &self.threads),
            ("out", &self.out),
        ];
        for (key, v) in single {
            if let Some(v) = v {
                s.set(key, v.clone())?;
            }
        }
        if !self.variant.is_empty() {
            s.set("variant", self.variant.join(","))?;
        }
        if !self.l.is_empty() {
            s.set("l", self.l.join(","))?;
        }
        RunConfig::from_settings(&s)
    }
}

/// Runs a parsed command line, writing reports to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let env = || std::env::vars();
    match cli.command {
        Command::Gen(a) => commands::gen(&a, &a.common.resolve(env())?, out),
        Command::Split(a) => commands::split(a.nq, &a.common.resolve(env())?, out),
        Command::Truth(c) => commands::truth(&c.resolve(env())?, out),
        Command::Build(c) => commands::build(&c.resolve(env())?, out),
        Command::Search(c) => commands::search(&c.resolve(env())?, out),
        Command::Bench(a) => commands::bench(a.baseline, &a.common.resolve(env())?, out),
        Command::Analyze(a) => commands::analyze(&a, &a.common.resolve(env())?, out),
        Command::Dims(a) => commands::dims(a.fraction, &a.common.resolve(env())?, out),
    }
}
