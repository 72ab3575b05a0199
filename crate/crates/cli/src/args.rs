use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

/// Skill-topic mining pipeline over tagged course and program descriptions.
///
/// Stages run in order (ingest, preprocess, fit, scan, topics, profile) and hand
/// off through files in the run directory; `report` summarizes a run.
#[derive(Debug, Parser)]
#[command(name = "skillscope", version)]
pub struct Cli {
    /// Run directory holding the manifest and every stage's artifacts.
    #[arg(long, global = true, env = "SKILLSCOPE_RUN_DIR")]
    pub run_dir: Option<PathBuf>,

    /// Seed for every random choice; recorded in the manifest and reused by later stages.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Pipeline configuration (TOML or JSON) with optional [preprocess], [model] and [scan] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Ctm,
    Lda,
    Lsa,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ctm => "ctm",
            ModelKind::Lda => "lda",
            ModelKind::Lsa => "lsa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    Institution,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate a CSV or JSONL corpus, optionally filtered.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// csv or jsonl; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<String>,
        /// Keep only these institutions (repeatable).
        #[arg(long = "institution")]
        institutions: Vec<String>,
        /// Keep only these course types (repeatable): program, core, elective, core_or_elective.
        #[arg(long = "course-type")]
        course_types: Vec<String>,
    },
    /// Tokenize, apply the text rules and build the vocabulary and count vectors.
    Preprocess {
        /// Rule file (TOML or JSON); overrides the config's [preprocess] table.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Fit a topic model.
    Fit {
        #[arg(long, value_enum, default_value = "ctm")]
        model: ModelKind,
        /// Number of topics (default: the config's model.k, else 7).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Fit a CTM for every K in a range and score each by topic coherence.
    Scan {
        #[arg(long)]
        kmin: Option<usize>,
        #[arg(long)]
        kmax: Option<usize>,
        /// Top words per topic entering the coherence score.
        #[arg(long)]
        top: Option<usize>,
        /// Fits per K with different seeds, averaged.
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Write the top words of every fitted topic.
    Topics {
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Average document posteriors into per-institution profiles.
    Profile {
        #[arg(long, value_enum, default_value = "institution")]
        group_by: GroupBy,
        /// JSON object mapping topic index to a label, e.g. {"0": "Research"}.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Plain document mean instead of the per-program two-stage mean.
        #[arg(long)]
        flat: bool,
    },
    /// Print a summary of the run.
    Report,
}
