mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emolabel_core::annotator::PromptMode;

pub use error::CliError;

/// Music emotion annotation with language models, and its evaluation against
/// human raters.
#[derive(Debug, Parser)]
#[command(name = "emolabel", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "emolabel.toml")]
    pub config: PathBuf,
    /// Override the prompt mode.
    #[arg(long, global = true)]
    pub mode: Option<PromptMode>,
    /// Override the global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads for crawling, annotation and resampling.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Serve pages from the cache only.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Output directory (report, prompts or fixture, depending on the command).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch context pages for every track into the cache.
    Crawl,
    /// Label every track with the configured model.
    Annotate {
        /// Write prompts to files without calling the provider.
        #[arg(long)]
        dry_run: bool,
    },
    /// Annotate repeatedly and report label consistency across runs.
    Stability {
        #[arg(long)]
        runs: Option<u32>,
    },
    /// Build the majority-vote gold standard from the human annotations.
    Gold,
    /// Compute all statistics and write the report files.
    Evaluate,
    /// Generate a synthetic corpus with a ready-to-run config.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Start from the 211/175/14 shape with 180/94 model matches.
    #[arg(long)]
    pub reference: bool,
    #[arg(long)]
    pub full: Option<usize>,
    #[arg(long)]
    pub full_matches: Option<usize>,
    #[arg(long)]
    pub partial: Option<usize>,
    #[arg(long)]
    pub partial_matches: Option<usize>,
    #[arg(long)]
    pub partial_minority: Option<usize>,
    #[arg(long)]
    pub none: Option<usize>,
    #[arg(long)]
    pub none_matches: Option<usize>,
    /// Partial tracks per human where that human is in the majority.
    #[arg(long, value_delimiter = ',')]
    pub human_majority: Option<Vec<usize>>,
    #[arg(long)]
    pub nei: Option<usize>,
    #[arg(long)]
    pub unstable: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
