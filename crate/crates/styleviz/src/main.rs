use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use styleviz::config::PipelineConfig;
use styleviz::pipeline::{Pipeline, PipelineError, RunOptions, Stage};

#[derive(Debug, Parser)]
#[command(name = "styleviz", version, about = "Turn author writing sheets into images and run the rating study")]
struct Cli {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use deterministic offline providers for both LLM and images.
    #[arg(long, global = true)]
    mock: bool,
    /// Validate inputs and configuration without provider calls or writes.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Overrides both the corpus seed and the rater shuffle seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Provider calls in flight during the prompts and images stages.
    #[arg(long, global = true, default_value_t = 4)]
    parallel: usize,
    /// Output root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Corpus directory.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Parse and clean the corpus.
    Ingest,
    /// Synthesize prompt triples from cleaned sheets.
    Prompts,
    /// Generate one image per prompt and write the manifest.
    Images,
    /// Build the rater assignment plan.
    Assign,
    /// Run the survey HTTP service.
    Serve,
    /// Write responses.csv from the response store.
    Export,
    /// Compute the evaluation report from responses.csv.
    Report,
    /// ingest, prompts, images, assign.
    All,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Ingest => Stage::Ingest,
            Command::Prompts => Stage::Prompts,
            Command::Images => Stage::Images,
            Command::Assign => Stage::Assign,
            Command::Serve => Stage::Serve,
            Command::Export => Stage::Export,
            Command::Report => Stage::Report,
            Command::All => Stage::All,
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = cli.out {
        config.output_root = out;
    }
    if let Some(corpus) = cli.corpus {
        config.corpus_dir = corpus;
    }
    if let Some(seed) = cli.seed {
        config.apply_seed(seed);
    }
    if cli.mock {
        config.force_mock();
    }
    let options = RunOptions {
        dry_run: cli.dry_run,
        parallel: cli.parallel.max(1),
    };
    let pipeline = Pipeline::new(config, options)?;
    let report = pipeline.run(cli.command.into())?;
    for line in report.lines {
        println!("{line}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
