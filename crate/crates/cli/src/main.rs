//! `patsel`: validate bundles, generate synthetic ones, extract semantic
//! patterns and run data selection.
//!
//! Exit codes: 0 success, 1 data violation, 2 usage or I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use patsel_core::bundle::DEFAULT_TOLERANCE;
use patsel_core::extraction::ExtractionConfig;
use patsel_core::numkernels::Distance;
use patsel_core::selection::Strategy;
use patsel_core::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "patsel", version, about = "Training-free semantic-pattern data selection")]
struct Cli {
    /// Worker threads for extraction (0 = one per logical core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check every record of a bundle; the report goes to stderr.
    Validate {
        bundle: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Write a synthetic bundle.
    Synth(SynthArgs),
    /// Extract semantic patterns from every record of a bundle.
    Patterns {
        bundle: PathBuf,
        #[command(flatten)]
        extraction: ExtractionArgs,
        /// Seed for the per-image k-means.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select a subset of images; writes one JSON line per step plus a summary.
    Select(SelectArgs),
    /// Covering radius after each step of a selection, as CSV.
    Stats {
        selection: PathBuf,
        /// Patterns file (pattern pool) or bundle (global-feature pool).
        pool: PathBuf,
        /// Defaults to the distance recorded in the selection summary.
        #[arg(long)]
        distance: Option<Distance>,
        #[arg(long, value_enum, default_value_t = InputKind::Auto)]
        input_kind: InputKind,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    num_images: usize,
    #[arg(long, default_value_t = 14)]
    grid_h: u16,
    #[arg(long, default_value_t = 14)]
    grid_w: u16,
    #[arg(long, default_value_t = 384)]
    feat_dim: u16,
    #[arg(long, default_value_t = 10)]
    categories: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
struct ExtractionArgs {
    /// Share of [CLS] attention mass kept by the filter.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Maximum number of patterns per image.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Chebyshev radius of the locality mask, in grid cells.
    #[arg(long, default_value_t = 2)]
    d0: u32,
}

impl ExtractionArgs {
    fn config(self, seed: u64) -> ExtractionConfig {
        ExtractionConfig {
            tau: self.tau,
            k_patterns: self.k,
            d0: self.d0,
            seed,
            ..ExtractionConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Patterns file or bundle, told apart by magic bytes.
    input: PathBuf,
    #[arg(long, default_value = "prob")]
    strategy: Strategy,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    budget: u64,
    /// Seeds the selection and, for bundle input, the per-image k-means.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "cosine")]
    distance: Distance,
    #[arg(long, value_enum, default_value_t = InputKind::Auto)]
    input_kind: InputKind,
    /// Extraction settings, used when pattern strategies run on a bundle.
    #[command(flatten)]
    extraction: ExtractionArgs,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Write only the selected ids, one per line.
    #[arg(long)]
    ids_only: bool,
    /// Leave wall time out of the summary so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum InputKind {
    Auto,
    Bundle,
    Patterns,
}

/// Failure of a subcommand, already mapped to its exit code.
#[derive(Debug)]
enum Failure {
    Data(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Data(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidRecord { .. }
            | Error::DuplicateId(_)
            | Error::NonFinite(_)
            | Error::ZeroNorm(_)
            | Error::DimensionMismatch { .. } => Failure::Data(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| commands::run(cli.command)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let (Failure::Data(msg) | Failure::Usage(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn arguments_are_consistent() {
        Cli::command().debug_assert();
    }
}
