//! File-level commands behind the CLI.
//!
//! Each command writes `manifest.json` before anything else, then its
//! artifacts. Nothing written depends on the clock or on hash-map order, so
//! a fixed seed gives byte-identical output directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::ingest::{parse_csv, parse_jsonl, split_indices, CorpusFormat, Reject, SentimentLabel};
use crate::lexicon::{emotion_histogram, score_document, term_frequencies, Emotion, PolarityScore, SentimentLexicon, TermCount};
use crate::model::{argmax, encode_doc, Checkpoint, Classifier, EncodedDoc, ModelConfig, ModelKind};
use crate::preprocess::{tfidf, Preprocessor, TokenSequence, Vocabulary};
use crate::topics::{fit, LdaOptions, TopicReport};
use crate::train_eval::{evaluate as evaluate_docs, history_csv, train as train_model, EpochRecord, EvalReport, TrainConfig};
use crate::{Error, Result};

pub const SAMPLE_CORPUS: &str = include_str!("../data/sample_corpus.jsonl");
pub const SAMPLE_CORPUS_NAME: &str = "sample_corpus.jsonl";

/// Raw bytes of one input plus the name it is recorded under.
#[derive(Clone, Debug)]
pub struct Input {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Input {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            name: path.display().to_string(),
            bytes,
        })
    }

    pub fn from_text(name: impl Into<String>, text: &str) -> Self {
        Self {
            name: name.into(),
            bytes: text.as_bytes().to_vec(),
        }
    }

    pub fn sample_corpus() -> Self {
        Self::from_text(SAMPLE_CORPUS_NAME, SAMPLE_CORPUS)
    }

    pub fn text(&self) -> Result<&str> {
        std::str::from_utf8(&self.bytes).map_err(|e| Error::Input(format!("{}: not valid UTF-8 ({e})", self.name)))
    }

    fn record(&self) -> InputRecord {
        let digest = Sha256::digest(&self.bytes);
        let mut sha256 = String::with_capacity(64);
        for b in digest {
            let _ = write!(sha256, "{b:02x}");
        }
        InputRecord {
            path: self.name.clone(),
            sha256,
            bytes: self.bytes.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputRecord>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, inputs: &[&Input], artifacts: &[&str]) -> Self {
        Self {
            tool: "poultrylex".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: cfg.seed,
            config: RunConfig::KEYS
                .iter()
                .map(|k| (k.to_string(), cfg.get(k).expect("known key")))
                .collect(),
            inputs: inputs.iter().map(|i| i.record()).collect(),
            artifacts: artifacts.iter().map(|a| a.to_string()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Create `dir` and write the manifest into it.
fn start(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_artifact(dir, "manifest.json", &manifest.to_json())?;
    Ok(())
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serialises"));
        out.push('\n');
    }
    out
}

/// One preprocessed document as stored in `processed.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessedDoc {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<SentimentLabel>,
}

impl ProcessedDoc {
    pub fn sequence(&self) -> TokenSequence {
        TokenSequence::new(self.id.clone(), self.tokens.clone())
    }
}

pub fn parse_processed(input: &Input) -> Result<Vec<ProcessedDoc>> {
    let mut docs = Vec::new();
    for (i, line) in input.text()?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(line).map_err(|e| Error::parse(&input.name, i + 1, e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

fn load_lexicon(lexicon: Option<&Input>) -> Result<SentimentLexicon> {
    let lex = match lexicon {
        Some(input) => SentimentLexicon::parse(input.text()?, &input.name)?,
        None => SentimentLexicon::bundled(),
    };
    Ok(lex.stemmed())
}

pub const PREPROCESS_ARTIFACTS: &[&str] = &["manifest.json", "processed.jsonl", "vocab.txt", "tfidf.csv", "rejects.jsonl"];

#[derive(Clone, Debug)]
pub struct PreprocessOutput {
    pub docs: Vec<ProcessedDoc>,
    pub rejects: Vec<Reject>,
    pub vocab_size: usize,
}

/// Ingest a raw corpus (JSONL, or CSV by extension) and tokenize it.
pub fn preprocess(corpus: &Input, out: &Path, cfg: &RunConfig) -> Result<PreprocessOutput> {
    start(out, &RunManifest::new("preprocess", cfg, &[corpus], PREPROCESS_ARTIFACTS))?;
    let text = corpus.text()?;
    let parsed = match CorpusFormat::from_path(Path::new(&corpus.name)) {
        CorpusFormat::Csv => parse_csv(text, &corpus.name)?,
        CorpusFormat::Jsonl => parse_jsonl(text, &corpus.name)?,
    };
    let pre = Preprocessor::default();
    let seqs: Vec<TokenSequence> = parsed.documents.iter().map(|d| pre.tokenize(d)).collect();
    let docs: Vec<ProcessedDoc> = parsed
        .documents
        .iter()
        .zip(&seqs)
        .map(|(d, s)| ProcessedDoc {
            id: d.id.clone(),
            tokens: s.tokens.clone(),
            label: d.label,
        })
        .collect();
    let vocab = Vocabulary::build(&seqs);
    let matrix = tfidf(&seqs, &vocab, cfg.log_base, cfg.tf_mode);
    write_artifact(out, "processed.jsonl", &jsonl(&docs))?;
    write_artifact(out, "vocab.txt", &vocab.to_text())?;
    write_artifact(out, "tfidf.csv", &matrix.to_csv())?;
    write_artifact(out, "rejects.jsonl", &jsonl(&parsed.rejects))?;
    Ok(PreprocessOutput {
        docs,
        rejects: parsed.rejects,
        vocab_size: vocab.len(),
    })
}

pub const ANALYZE_ARTIFACTS: &[&str] = &["manifest.json", "analysis.json", "polarity.csv"];

#[derive(Clone, Debug, Serialize)]
pub struct DocPolarity {
    pub id: String,
    #[serde(flatten)]
    pub score: PolarityScore,
}

#[derive(Clone, Debug, Serialize)]
pub struct Analysis {
    pub n_docs: usize,
    pub n_tokens: usize,
    pub top_terms: Vec<TermCount>,
    pub emotions: BTreeMap<Emotion, usize>,
    pub polarity_counts: BTreeMap<SentimentLabel, usize>,
    pub documents: Vec<DocPolarity>,
}

impl Analysis {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serialises") + "\n"
    }

    pub fn polarity_csv(&self) -> String {
        let mut out = String::from("id,pos_score,neg_score,p_c,f_m,label,no_hits\n");
        for d in &self.documents {
            let s = &d.score;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                csv_field(&d.id),
                s.pos_score,
                s.neg_score,
                s.p_c,
                s.f_m,
                s.label,
                s.no_hits
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} documents, {} tokens\n", self.n_docs, self.n_tokens);
        for l in SentimentLabel::ALL {
            let _ = writeln!(out, "{l}\t{}", self.polarity_counts[&l]);
        }
        let terms: Vec<String> = self.top_terms.iter().map(|t| format!("{} ({})", t.term, t.count)).collect();
        let _ = writeln!(out, "top terms: {}", terms.join(", "));
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Term frequencies, emotion counts and per-document lexicon polarity.
pub fn analyze(processed: &Input, lexicon: Option<&Input>, out: &Path, cfg: &RunConfig) -> Result<Analysis> {
    let mut inputs = vec![processed];
    inputs.extend(lexicon);
    start(out, &RunManifest::new("analyze", cfg, &inputs, ANALYZE_ARTIFACTS))?;
    let docs = parse_processed(processed)?;
    let lex = load_lexicon(lexicon)?;
    let seqs: Vec<TokenSequence> = docs.iter().map(ProcessedDoc::sequence).collect();
    let freq = term_frequencies(&seqs);
    let documents: Vec<DocPolarity> = docs
        .iter()
        .map(|d| DocPolarity {
            id: d.id.clone(),
            score: score_document(&d.tokens, &lex, cfg.neutral_band),
        })
        .collect();
    let mut polarity_counts: BTreeMap<SentimentLabel, usize> = SentimentLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for d in &documents {
        *polarity_counts.get_mut(&d.score.label).expect("all labels present") += 1;
    }
    let analysis = Analysis {
        n_docs: docs.len(),
        n_tokens: freq.total(),
        top_terms: freq.top_k(cfg.top_k),
        emotions: emotion_histogram(&seqs, &lex),
        polarity_counts,
        documents,
    };
    write_artifact(out, "analysis.json", &analysis.to_json())?;
    write_artifact(out, "polarity.csv", &analysis.polarity_csv())?;
    Ok(analysis)
}

pub const TOPICS_ARTIFACTS: &[&str] = &["manifest.json", "topics.json", "lda_trace.csv"];

pub fn topics(processed: &Input, out: &Path, cfg: &RunConfig) -> Result<TopicReport> {
    start(out, &RunManifest::new("topics", cfg, &[processed], TOPICS_ARTIFACTS))?;
    let seqs: Vec<TokenSequence> = parse_processed(processed)?.iter().map(ProcessedDoc::sequence).collect();
    let opts = LdaOptions {
        k: cfg.num_topics,
        alpha: cfg.lda_alpha,
        beta: cfg.lda_beta,
        sweeps: cfg.lda_sweeps,
        burn_in: cfg.lda_burn_in,
        seed: cfg.seed,
    };
    let lda = fit(&seqs, &opts)?;
    let report = lda.report(cfg.topic_terms);
    let mut trace = String::from("sweep,log_likelihood\n");
    for (sweep, ll) in &lda.trace {
        let _ = writeln!(trace, "{sweep},{ll}");
    }
    write_artifact(out, "topics.json", &report.to_json())?;
    write_artifact(out, "lda_trace.csv", &trace)?;
    Ok(report)
}

pub const TRAIN_ARTIFACTS: &[&str] = &[
    "manifest.json",
    "checkpoint.json",
    "history.csv",
    "train.jsonl",
    "val.jsonl",
    "test.jsonl",
];

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub kind: Option<ModelKind>,
    /// Label unlabeled documents with the lexicon instead of dropping them.
    pub weak_labels: bool,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub kind: ModelKind,
    pub sizes: [usize; 3],
    pub dropped: usize,
    pub vocab_size: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn encode_all(docs: &[ProcessedDoc], vocab: &Vocabulary, lex: &SentimentLexicon, max_len: usize) -> Vec<EncodedDoc> {
    docs.iter()
        .map(|d| encode_doc(&d.sequence(), vocab, lex, max_len, d.label.map(SentimentLabel::index)))
        .collect()
}

/// Split, build the vocabulary from the training split, fit, and save the
/// best-on-validation checkpoint next to the three splits.
pub fn train(
    processed: &Input,
    lexicon: Option<&Input>,
    opts: &TrainOptions,
    out: &Path,
    cfg: &RunConfig,
) -> Result<TrainSummary> {
    let mut inputs = vec![processed];
    inputs.extend(lexicon);
    start(out, &RunManifest::new("train", cfg, &inputs, TRAIN_ARTIFACTS))?;
    let kind = opts.kind.unwrap_or(ModelKind::Poultrylex);
    let lex = load_lexicon(lexicon)?;
    let all = parse_processed(processed)?;
    let total = all.len();
    let docs: Vec<ProcessedDoc> = all
        .into_iter()
        .filter_map(|mut d| {
            if d.label.is_none() && opts.weak_labels {
                d.label = Some(score_document(&d.tokens, &lex, cfg.neutral_band).label);
            }
            d.label.map(|_| d)
        })
        .collect();
    if docs.is_empty() {
        return Err(Error::Input(format!(
            "{}: no labeled documents to train on (use --weak-labels to label them from the lexicon)",
            processed.name
        )));
    }
    let labels: Vec<Option<SentimentLabel>> = docs.iter().map(|d| d.label).collect();
    let split = split_indices(&labels, cfg.ratios(), cfg.seed, cfg.stratified)?;
    let [train_docs, val_docs, test_docs] = split.map(|idx| idx.iter().map(|&i| docs[i].clone()).collect::<Vec<_>>());
    let vocab = Vocabulary::build(train_docs.iter().map(ProcessedDoc::sequence).collect::<Vec<_>>().iter());
    let model = Classifier::new(ModelConfig::from_run(cfg, kind, vocab.len()), cfg.seed)?;
    let train_enc = encode_all(&train_docs, &vocab, &lex, cfg.max_len);
    let val_enc = encode_all(&val_docs, &vocab, &lex, cfg.max_len);
    let outcome = train_model(model, &train_enc, &val_enc, &TrainConfig::from_run(cfg))?;
    write_artifact(out, "checkpoint.json", &Checkpoint::new(&outcome.model, &vocab, &lex).to_json())?;
    write_artifact(out, "history.csv", &history_csv(&outcome.history))?;
    write_artifact(out, "train.jsonl", &jsonl(&train_docs))?;
    write_artifact(out, "val.jsonl", &jsonl(&val_docs))?;
    write_artifact(out, "test.jsonl", &jsonl(&test_docs))?;
    Ok(TrainSummary {
        kind,
        sizes: [train_docs.len(), val_docs.len(), test_docs.len()],
        dropped: total - docs.len(),
        vocab_size: vocab.len(),
        best_epoch: outcome.best_epoch,
        history: outcome.history,
    })
}

fn restore(checkpoint: &Input) -> Result<(Classifier, Vocabulary, SentimentLexicon)> {
    Checkpoint::from_json(checkpoint.text()?, &checkpoint.name)?.restore()
}

pub const EVAL_ARTIFACTS: &[&str] = &["manifest.json", "eval_report.json", "roc.csv"];

pub fn evaluate(checkpoint: &Input, processed: &Input, out: &Path, cfg: &RunConfig) -> Result<EvalReport> {
    start(out, &RunManifest::new("eval", cfg, &[checkpoint, processed], EVAL_ARTIFACTS))?;
    let (model, vocab, lex) = restore(checkpoint)?;
    let docs = parse_processed(processed)?;
    if let Some(d) = docs.iter().find(|d| d.label.is_none()) {
        return Err(Error::Input(format!("{}: document {:?} has no label", processed.name, d.id)));
    }
    let encoded = encode_all(&docs, &vocab, &lex, model.config.max_len);
    let report = evaluate_docs(&model, &encoded, cfg.batch_size)?;
    write_artifact(out, "eval_report.json", &report.to_json())?;
    write_artifact(out, "roc.csv", &report.roc_csv())?;
    Ok(report)
}

pub const PREDICT_ARTIFACTS: &[&str] = &["manifest.json", "prediction.json"];

#[derive(Clone, Debug, Serialize)]
pub struct Prediction {
    pub label: SentimentLabel,
    pub probabilities: BTreeMap<SentimentLabel, f64>,
    pub tokens: Vec<String>,
    pub polarity: PolarityScore,
}

impl Prediction {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prediction serialises") + "\n"
    }
}

/// Classify one text with a saved checkpoint. Text with no usable tokens is
/// rejected rather than scored as `<unk>`.
pub fn predict(checkpoint: &Input, text: &str, out: &Path, cfg: &RunConfig) -> Result<Prediction> {
    let text_input = Input::from_text("<text>", text);
    start(out, &RunManifest::new("predict", cfg, &[checkpoint, &text_input], PREDICT_ARTIFACTS))?;
    let (model, vocab, lex) = restore(checkpoint)?;
    let seq = Preprocessor::default().tokenize_text("input", text);
    if seq.is_empty() {
        return Err(Error::Input("text has no tokens left after preprocessing".into()));
    }
    let encoded = encode_doc(&seq, &vocab, &lex, model.config.max_len, None);
    let probs = model.predict_proba(std::slice::from_ref(&encoded), 1)?.remove(0);
    let label = SentimentLabel::from_index(argmax(&probs)).expect("class index in range");
    let prediction = Prediction {
        label,
        probabilities: SentimentLabel::ALL.iter().map(|&l| (l, probs[l.index()])).collect(),
        polarity: score_document(&seq.tokens, &lex, cfg.neutral_band),
        tokens: seq.tokens,
    };
    write_artifact(out, "prediction.json", &prediction.to_json())?;
    Ok(prediction)
}

pub const RUN_ALL_STAGES: &[&str] = &[
    "preprocess",
    "analyze",
    "topics",
    "train-poultrylex",
    "eval-poultrylex",
    "train-cnn",
    "eval-cnn",
];

#[derive(Clone, Debug)]
pub struct RunAllOutput {
    pub analysis: Analysis,
    pub topics: TopicReport,
    pub reports: Vec<EvalReport>,
}

/// Read back an artifact under a name relative to the run root, so the
/// recorded input paths don't depend on where `out` lives.
fn reread(root: &Path, rel: &str) -> Result<Input> {
    let mut input = Input::read(&root.join(rel))?;
    input.name = rel.to_string();
    Ok(input)
}

/// Every stage in sequence on one corpus, each into its own subdirectory.
/// Both models are evaluated on the same held-out test split.
pub fn run_all(corpus: &Input, out: &Path, cfg: &RunConfig) -> Result<RunAllOutput> {
    let artifacts: Vec<String> = std::iter::once("manifest.json".to_string())
        .chain(RUN_ALL_STAGES.iter().map(|s| format!("{s}/")))
        .collect();
    let names: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    start(out, &RunManifest::new("run-all", cfg, &[corpus], &names))?;

    preprocess(corpus, &out.join("preprocess"), cfg)?;
    let processed = reread(out, "preprocess/processed.jsonl")?;
    let analysis = analyze(&processed, None, &out.join("analyze"), cfg)?;
    let topics = topics(&processed, &out.join("topics"), cfg)?;
    let mut reports = Vec::new();
    for kind in [ModelKind::Poultrylex, ModelKind::Cnn] {
        let opts = TrainOptions {
            kind: Some(kind),
            weak_labels: false,
        };
        train(&processed, None, &opts, &out.join(format!("train-{kind}")), cfg)?;
        let ckpt = reread(out, &format!("train-{kind}/checkpoint.json"))?;
        let test = reread(out, &format!("train-{kind}/test.jsonl"))?;
        reports.push(evaluate(&ckpt, &test, &out.join(format!("eval-{kind}")), cfg)?);
    }
    Ok(RunAllOutput {
        analysis,
        topics,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_corpus_parses_cleanly() {
        let c = parse_jsonl(SAMPLE_CORPUS, SAMPLE_CORPUS_NAME).unwrap();
        assert_eq!(c.len(), 50);
        assert!(c.rejects.is_empty());
        c.require_labels().unwrap();
    }

    #[test]
    fn digest_is_hex_sha256() {
        let r = Input::from_text("x", "abc").record();
        assert_eq!(r.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(r.bytes, 3);
    }

    #[test]
    fn processed_round_trip() {
        let docs = vec![
            ProcessedDoc {
                id: "a".into(),
                tokens: vec!["hen".into(), "not_sick".into()],
                label: Some(SentimentLabel::Positive),
            },
            ProcessedDoc {
                id: "b".into(),
                tokens: vec![],
                label: None,
            },
        ];
        let back = parse_processed(&Input::from_text("p", &jsonl(&docs))).unwrap();
        assert_eq!(back, docs);
    }

    #[test]
    fn csv_field_quotes_when_needed() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
