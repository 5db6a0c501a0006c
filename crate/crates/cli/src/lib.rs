//! Command-line front end: `synth`, `embed`, `neighbors`, `cohort`, `train`,
//! `evaluate` and `suite`, driven by one JSON [`RunConfig`].
//!
//! Any stage parameter can be overridden with a dotted flag such as
//! `--cbow.window=20` or `--model.input_mode rand`. Stage seeds are derived
//! from the global seed (see [`config::stage`]) before overrides apply.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 data error,
//! 4 numeric failure.

pub mod commands;
pub mod config;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ehrcnn::{Error, ErrorKind};

pub use config::{Override, RunConfig};
pub use report::EvalReport;

#[derive(Debug, Parser)]
#[command(name = "ehrcnn", version, about = "Risk prediction from medical event sequences")]
pub struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, also the default location of inputs.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub patients: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct InputArgs {
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Defaults to `embeddings.txt` in the output directory when present.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic case/control corpus.
    Synth,
    /// Build the vocabulary and train CBOW embeddings.
    Embed(CorpusArgs),
    /// Print the nearest codes to one code.
    Neighbors {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        code: String,
        /// `diagnosis` or `medication`; needed when the code has both.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Extract, match and split the labelled cohort.
    Cohort {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train the CNN.
    Train {
        #[command(flatten)]
        inputs: InputArgs,
        /// Input mode, shorthand for `--model.input_mode`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Score a trained CNN on the test split.
    Evaluate {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also run the baseline suite and add its rows to the report.
        #[arg(long)]
        suite: bool,
    },
    /// Run the order-free baseline classifiers.
    Suite {
        #[command(flatten)]
        inputs: InputArgs,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn or_default(path: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| out.join(name))
}

impl InputArgs {
    fn resolve(&self, out: &Path) -> commands::ModelInputs {
        let default_emb = out.join(commands::EMBEDDINGS);
        commands::ModelInputs {
            cohort: or_default(&self.cohort, out, commands::COHORT),
            vocab: or_default(&self.vocab, out, commands::VOCAB),
            embeddings: self.embeddings.clone().or_else(|| default_emb.is_file().then_some(default_emb)),
        }
    }
}

impl CorpusArgs {
    fn resolve(&self, out: &Path) -> (PathBuf, PathBuf) {
        (or_default(&self.patients, out, commands::PATIENTS), or_default(&self.events, out, commands::EVENTS))
    }
}

/// Runs one invocation. `args` includes the program name.
pub fn run(args: Vec<String>, stdout: &mut dyn Write) -> Result<(), Error> {
    let (args, mut overrides) = config::extract_overrides(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            write!(stdout, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.to_string().trim_start_matches("error: ").trim_end().to_string())),
    };
    if let Command::Train { mode: Some(mode), .. } = &cli.command {
        overrides.push(Override::new("model.input_mode", mode)?);
    }
    let config = RunConfig::resolve(cli.config.as_deref(), cli.seed, &overrides)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth => {
            commands::synth(&config, out)?;
        }
        Command::Embed(corpus) => {
            let (p, e) = corpus.resolve(out);
            commands::embed(&config, &p, &e, out)?;
        }
        Command::Neighbors { embeddings, code, kind, k } => {
            let path = or_default(embeddings, out, commands::EMBEDDINGS);
            commands::neighbors(&path, code, kind.as_deref(), *k, stdout)?;
        }
        Command::Cohort { corpus, vocab } => {
            let (p, e) = corpus.resolve(out);
            let summary = commands::cohort(&config, &p, &e, &or_default(vocab, out, commands::VOCAB), out)?;
            eprintln!("wrote {}", summary[0].display());
        }
        Command::Train { inputs, .. } => {
            let (_, history) = commands::train(&config, &inputs.resolve(out), out)?;
            for r in &history.epochs {
                eprintln!(
                    "epoch {:3}  train loss {:.4}  val loss {:.4}  val auroc {:.4}",
                    r.epoch, r.train_loss, r.val_loss, r.val_auroc
                );
            }
            eprintln!("kept epoch {} (val auroc {:.4})", history.best_epoch, history.best_val_auroc);
        }
        Command::Evaluate { inputs, model, suite } => {
            let model = or_default(model, out, commands::MODEL);
            let report = commands::evaluate(&config, &model, &inputs.resolve(out), *suite, out)?;
            report.write_csv(&mut &mut *stdout)?;
        }
        Command::Suite { inputs } => {
            let rows = commands::suite(&config, &inputs.resolve(out), out)?;
            ehrcnn::baselines::write_suite_csv(&rows, &mut &mut *stdout)?;
        }
    }
    Ok(())
}
