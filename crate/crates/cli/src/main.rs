mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ClassifierArgs, FileConfig, SynthArgs};

#[derive(Debug, Parser)]
#[command(name = "revprobe", version, about = "Token-level uncertainty features from activation dumps")]
pub struct Cli {
    /// Flat TOML file whose keys mirror the flags
    #[arg(long, global = true)]
    pub config_file: Option<PathBuf>,
    /// Seed for every random choice (synthesis, splits, boosting)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Print a machine-readable JSON object instead of text
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dump against the format invariants
    Validate { dump: PathBuf },
    /// Write a synthetic dump with planted unsupported spans
    Synth {
        out: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Assemble a feature matrix
    Features {
        dump: PathBuf,
        /// f93, f120, f204 or fmax
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the matrix as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Medical keyword list, one term per line
        #[arg(long)]
        wordlist: Option<PathBuf>,
        /// Comma-separated documents to assemble (default: all)
        #[arg(long, value_delimiter = ',')]
        docs: Option<Vec<String>>,
        /// Comma-separated documents for corpus statistics (default: the assembled ones)
        #[arg(long, value_delimiter = ',')]
        stats_docs: Option<Vec<String>>,
    },
    /// Train a classifier on a feature matrix
    Train {
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated training documents (default: all)
        #[arg(long, value_delimiter = ',')]
        docs: Option<Vec<String>>,
        #[command(flatten)]
        classifier: ClassifierArgs,
    },
    /// Score a feature matrix and write an evaluation report
    Predict {
        model: PathBuf,
        features: PathBuf,
        /// Report JSON path
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated documents to score (default: all)
        #[arg(long, value_delimiter = ',')]
        docs: Option<Vec<String>>,
        /// Decision threshold (default: the one chosen on the training rows)
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Document-level k-fold cross-validation
    Cv {
        features: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        /// Write the fold summary as JSON
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        classifier: ClassifierArgs,
    },
    /// Score the inference-only baselines on a document split
    Baseline {
        dump: PathBuf,
        /// Comma-separated baselines (default: all)
        #[arg(long, value_delimiter = ',')]
        method: Option<Vec<String>>,
        #[arg(long)]
        train_ratio: Option<f64>,
        /// Directory for one report per baseline
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a report JSON as json, csv, ansi or html
    Report {
        report: PathBuf,
        /// Comma-separated formats
        #[arg(long, value_delimiter = ',')]
        format: Option<Vec<String>>,
        /// Output directory; without it a single format goes to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize or load a dump, assemble, cross-validate, train, evaluate and report
    Pipeline {
        /// Existing dump; without it a synthetic one is written under the output directory
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// f93, f120, f204 or fmax
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        wordlist: Option<PathBuf>,
        /// Cross-validation folds; 0 skips cross-validation
        #[arg(long)]
        folds: Option<usize>,
        /// Fraction of documents in the training split
        #[arg(long)]
        train_ratio: Option<f64>,
        /// Comma-separated report formats
        #[arg(long, value_delimiter = ',')]
        format: Option<Vec<String>>,
        /// Comma-separated baselines, or `none`
        #[arg(long, value_delimiter = ',')]
        baselines: Option<Vec<String>>,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        classifier: ClassifierArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RP_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let (code, message) = match e.downcast_ref::<revprobe_core::Error>() {
                Some(core) => (core.code().to_string(), core.to_string()),
                None => ("ERROR".to_string(), format!("{e:#}")),
            };
            if json {
                let v = serde_json::json!({ "error": { "code": code, "message": message } });
                println!("{v}");
            } else {
                eprintln!("error [{code}]: {message}");
            }
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let file = match &cli.config_file {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let workers = cli.workers.or(file.workers);
    if let Some(0) = workers {
        anyhow::bail!("--workers must be at least 1");
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let ctx = commands::Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        json: cli.json,
        file,
    };
    let outcome = pool.install(|| commands::dispatch(&ctx, cli.command))?;
    if ctx.json {
        println!("{}", serde_json::to_string_pretty(&outcome.json)?);
    } else if !outcome.text.is_empty() {
        print!("{}", outcome.text);
    }
    Ok(outcome.exit)
}
