use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use poultrylex::model::ModelKind;
use poultrylex::pipeline::{self, Input, TrainOptions};
use poultrylex::{Error, Result, RunConfig};

/// Sentiment, emotion and topic analysis for poultry-farming posts.
#[derive(Debug, Parser)]
#[command(name = "poultrylex", version)]
struct Cli {
    /// Seed for every random draw; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single config override, applied after `--config`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean, tokenize and vectorize a raw JSONL or CSV corpus.
    Preprocess { corpus: PathBuf },
    /// Term frequencies, emotions and lexicon polarity.
    Analyze {
        processed: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Fit an LDA topic model.
    Topics { processed: PathBuf },
    /// Train a classifier and save a checkpoint.
    Train {
        processed: PathBuf,
        /// poultrylex or cnn.
        #[arg(long, default_value = "poultrylex")]
        model: String,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Label unlabeled documents from the lexicon instead of dropping them.
        #[arg(long)]
        weak_labels: bool,
    },
    /// Score a checkpoint on a labeled processed file.
    Eval { checkpoint: PathBuf, processed: PathBuf },
    /// Classify a single text.
    Predict { checkpoint: PathBuf, text: String },
    /// Every stage on the bundled sample corpus, or on `--corpus`.
    RunAll {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_opt(path: Option<&Path>) -> Result<Option<Input>> {
    path.map(Input::read).transpose()
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Preprocess { corpus } => {
            let r = pipeline::preprocess(&Input::read(corpus)?, out, &cfg)?;
            println!(
                "{} documents, {} rejected, vocabulary {}",
                r.docs.len(),
                r.rejects.len(),
                r.vocab_size
            );
        }
        Command::Analyze { processed, lexicon } => {
            let lex = read_opt(lexicon.as_deref())?;
            let a = pipeline::analyze(&Input::read(processed)?, lex.as_ref(), out, &cfg)?;
            print!("{}", a.summary());
        }
        Command::Topics { processed } => {
            let report = pipeline::topics(&Input::read(processed)?, out, &cfg)?;
            print!("{}", report.summary());
        }
        Command::Train {
            processed,
            model,
            lexicon,
            weak_labels,
        } => {
            let opts = TrainOptions {
                kind: Some(model.parse::<ModelKind>()?),
                weak_labels: *weak_labels,
            };
            let lex = read_opt(lexicon.as_deref())?;
            let s = pipeline::train(&Input::read(processed)?, lex.as_ref(), &opts, out, &cfg)?;
            let [tr, va, te] = s.sizes;
            println!("{}: train {tr}, val {va}, test {te}, vocabulary {}", s.kind, s.vocab_size);
            if s.dropped > 0 {
                println!("dropped {} unlabeled documents", s.dropped);
            }
            if let Some(last) = s.history.last() {
                println!("final train loss {:.4}, best epoch {}", last.train_loss, s.best_epoch);
            }
        }
        Command::Eval { checkpoint, processed } => {
            let r = pipeline::evaluate(&Input::read(checkpoint)?, &Input::read(processed)?, out, &cfg)?;
            println!("{}: accuracy {:.4}, macro F1 {:.4}", r.model_kind, r.accuracy, r.macro_avg.f1);
        }
        Command::Predict { checkpoint, text } => {
            let p = pipeline::predict(&Input::read(checkpoint)?, text, out, &cfg)?;
            print!("{}", p.to_json());
        }
        Command::RunAll { corpus } => {
            let corpus = match corpus {
                Some(path) => Input::read(path)?,
                None => Input::sample_corpus(),
            };
            let r = pipeline::run_all(&corpus, out, &cfg)?;
            print!("{}", r.analysis.summary());
            print!("{}", r.topics.summary());
            for rep in &r.reports {
                println!("{}: test accuracy {:.4}, macro F1 {:.4}", rep.model_kind, rep.accuracy, rep.macro_avg.f1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
