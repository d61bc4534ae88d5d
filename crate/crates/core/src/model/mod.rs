//! Sentiment classifiers as pure functions of a [`ParamStore`]: the
//! dual-stream gated cross-attention network and a CNN baseline.

mod batch;
pub mod cnn;
pub mod net;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use autodiff::{ParamStore, StoredTensor, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{encode_doc, Batch, EncodedDoc, SIGN_NEUTRAL};

use crate::config::RunConfig;
use crate::ingest::SentimentLabel;
use crate::lexicon::SentimentLexicon;
use crate::preprocess::Vocabulary;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Poultrylex,
    Cnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Poultrylex => "poultrylex",
            ModelKind::Cnn => "cnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poultrylex" | "poultrylex-net" => Ok(ModelKind::Poultrylex),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(Error::Input(format!("unsupported model {other:?} (expected poultrylex or cnn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub num_classes: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub window: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub residual: bool,
    pub ffn_mult: usize,
    pub cnn_filters: usize,
    pub cnn_widths: Vec<usize>,
}

impl ModelConfig {
    pub fn from_run(run: &RunConfig, kind: ModelKind, vocab_size: usize) -> Self {
        Self {
            kind,
            vocab_size,
            num_classes: SentimentLabel::COUNT,
            d_model: run.d_model,
            n_heads: run.n_heads,
            n_layers: run.n_layers,
            window: run.window,
            max_len: run.max_len,
            dropout: run.dropout,
            residual: run.residual,
            ffn_mult: run.ffn_mult,
            cnn_filters: run.cnn_filters,
            cnn_widths: run.cnn_widths.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 || self.num_classes < 2 || self.d_model == 0 || self.max_len == 0 {
            return bad("vocab_size, num_classes, d_model and max_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match self.kind {
            ModelKind::Poultrylex => {
                if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
                    return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
                }
                if self.ffn_mult == 0 {
                    return bad("ffn_mult must be positive".into());
                }
            }
            ModelKind::Cnn => {
                if self.cnn_filters == 0 || self.cnn_widths.is_empty() || self.cnn_widths.contains(&0) {
                    return bad("CNN needs positive filter count and widths".into());
                }
            }
        }
        Ok(())
    }

    /// Shortest batch length the model accepts. The CNN always runs at full
    /// length so PAD windows, and hence its outputs, do not depend on how
    /// documents are batched.
    pub fn min_len(&self) -> usize {
        match self.kind {
            ModelKind::Poultrylex => 1,
            ModelKind::Cnn => self.cnn_widths.iter().copied().max().unwrap_or(1).max(self.max_len),
        }
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self.kind {
            ModelKind::Poultrylex => net::param_shapes(self),
            ModelKind::Cnn => cnn::param_shapes(self),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub train: bool,
    /// Dropout seed for this pass.
    pub seed: u64,
}

impl Mode {
    pub fn eval() -> Self {
        Self { train: false, seed: 0 }
    }

    pub fn train(seed: u64) -> Self {
        Self { train: true, seed }
    }
}

/// Parameters registered on a tape, looked up by name.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn bind(tape: &mut Tape, params: &ParamStore) -> Self {
        Self {
            vars: params.iter().map(|(k, t)| (k.clone(), tape.param(t.clone()))).collect(),
        }
    }

    pub fn from_parts(names: &[String], vars: &[Var]) -> Self {
        Self {
            vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Input(format!("missing parameter {name}")))
    }

    /// Gradients after `backward`; parameters the loss never touched get zeros.
    pub fn grads(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, &v)| (k.clone(), tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v)))))
            .collect()
    }
}

/// Xavier-uniform matrices, `U(±√(3/d))` embedding rows, zero biases and zero
/// head-mixing logits.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in cfg.param_shapes() {
        let limit = if name.contains("embed") {
            (3.0 / cfg.d_model as f64).sqrt()
        } else if shape.len() == 2 {
            (6.0 / (shape[0] + shape[1]) as f64).sqrt()
        } else {
            0.0
        };
        let t = Tensor::from_fn(&shape, |_| if limit > 0.0 { rng.random_range(-limit..limit) } else { 0.0 });
        store.insert(name, t);
    }
    Ok(store)
}

/// Output of either model's forward pass.
pub struct Outputs {
    pub logits: Var,
    pub y: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Classifier {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Reject parameter sets whose names or shapes disagree with the config.
    pub fn check_shapes(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.config.param_shapes();
        if expected.len() != self.params.len() {
            return Err(Error::Input(format!(
                "checkpoint has {} parameters, config expects {}",
                self.params.len(),
                expected.len()
            )));
        }
        for (name, shape) in expected {
            let t = self.params.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Input(format!(
                    "parameter {name} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn batch(&self, docs: &[&EncodedDoc]) -> Result<Batch> {
        Batch::new(docs, self.config.min_len())
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &Batch, mode: Mode) -> Result<Outputs> {
        Ok(match self.config.kind {
            ModelKind::Poultrylex => {
                let t = net::forward(tape, p, &self.config, batch, mode)?;
                Outputs {
                    logits: t.head.logits,
                    y: t.head.y,
                }
            }
            ModelKind::Cnn => {
                let t = cnn::forward(tape, p, &self.config, batch, mode)?;
                Outputs { logits: t.logits, y: t.y }
            }
        })
    }

    /// Class probabilities in eval mode, one row per document, in input order.
    pub fn predict_proba(&self, docs: &[EncodedDoc], batch_size: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(docs.len());
        let mut tape = Tape::new();
        for chunk in docs.chunks(batch_size.max(1)) {
            tape.reset();
            let refs: Vec<&EncodedDoc> = chunk.iter().collect();
            let batch = self.batch(&refs)?;
            let p = Bound::bind(&mut tape, &self.params);
            let o = self.forward(&mut tape, &p, &batch, Mode::eval())?;
            let y = tape.value(o.y);
            if !y.is_finite() {
                return Err(Error::Numerical("non-finite class probabilities".into()));
            }
            out.extend((0..batch.b).map(|r| y.row(r).to_vec()));
        }
        Ok(out)
    }
}

/// Argmax with the lowest index winning ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub const CHECKPOINT_FORMAT: &str = "poultrylex-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a classifier and encode new text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model_kind: ModelKind,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub lexicon: SentimentLexicon,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn new(model: &Classifier, vocab: &Vocabulary, lexicon: &SentimentLexicon) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model_kind: model.config.kind,
            config: model.config.clone(),
            vocab: vocab.terms().to_vec(),
            lexicon: lexicon.clone(),
            params: model.params.to_stored(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)
            .map_err(|e| Error::parse(origin, e.line(), format!("bad checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!(
                "{origin}: unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.model_kind != ck.config.kind {
            return Err(Error::Input(format!("{origin}: model kind disagrees with config")));
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Rebuild the classifier, vocabulary and lexicon, validating shapes.
    pub fn restore(&self) -> Result<(Classifier, Vocabulary, SentimentLexicon)> {
        let vocab = Vocabulary::from_terms(self.vocab.iter().cloned())?;
        if vocab.len() != self.config.vocab_size {
            return Err(Error::Input(format!(
                "checkpoint vocabulary has {} entries, config says {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        let model = Classifier {
            config: self.config.clone(),
            params: ParamStore::from_stored(self.params.clone())?,
        };
        model.check_shapes()?;
        Ok((model, vocab, self.lexicon.clone()))
    }
}
