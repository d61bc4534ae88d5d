//! Run configuration: a flat `key = value` file whose every key can also be
//! set from the command line.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    Natural,
    Base10,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Base10 => x.log10(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LogBase::Natural => "natural",
            LogBase::Base10 => "base10",
        }
    }
}

/// How the term-frequency factor of TF-IDF is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TfMode {
    /// 1 if the term occurs in the document, else 0.
    Binary,
    /// Raw occurrence count.
    Count,
}

impl TfMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TfMode::Binary => "binary",
            TfMode::Count => "count",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub stratified: bool,

    pub log_base: LogBase,
    pub tf_mode: TfMode,
    pub neutral_band: f64,
    pub top_k: usize,

    pub num_topics: usize,
    pub lda_alpha: f64,
    pub lda_beta: f64,
    pub lda_sweeps: usize,
    pub lda_burn_in: usize,
    pub topic_terms: usize,

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

    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            stratified: true,
            log_base: LogBase::Natural,
            tf_mode: TfMode::Binary,
            neutral_band: 0.1,
            top_k: 20,
            num_topics: 5,
            lda_alpha: 0.1,
            lda_beta: 0.01,
            lda_sweeps: 1000,
            lda_burn_in: 200,
            topic_terms: 10,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            window: 2,
            max_len: 64,
            dropout: 0.1,
            residual: true,
            ffn_mult: 4,
            cnn_filters: 32,
            cnn_widths: vec![3, 4, 5],
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 16,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl RunConfig {
    /// Every recognised key, in file order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "split_train",
        "split_val",
        "split_test",
        "stratified",
        "log_base",
        "tf_mode",
        "neutral_band",
        "top_k",
        "num_topics",
        "lda_alpha",
        "lda_beta",
        "lda_sweeps",
        "lda_burn_in",
        "topic_terms",
        "d_model",
        "n_heads",
        "n_layers",
        "window",
        "max_len",
        "dropout",
        "residual",
        "ffn_mult",
        "cnn_filters",
        "cnn_widths",
        "learning_rate",
        "epochs",
        "batch_size",
    ];

    pub fn ratios(&self) -> (f64, f64, f64) {
        (self.split_train, self.split_val, self.split_test)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_num(key, v)?,
            "split_train" => self.split_train = parse_num(key, v)?,
            "split_val" => self.split_val = parse_num(key, v)?,
            "split_test" => self.split_test = parse_num(key, v)?,
            "stratified" => self.stratified = parse_bool(key, v)?,
            "log_base" => {
                self.log_base = match v {
                    "natural" | "e" | "ln" => LogBase::Natural,
                    "base10" | "10" => LogBase::Base10,
                    _ => return Err(Error::Config(format!("log_base: unknown value {v:?}"))),
                }
            }
            "tf_mode" => {
                self.tf_mode = match v {
                    "binary" => TfMode::Binary,
                    "count" => TfMode::Count,
                    _ => return Err(Error::Config(format!("tf_mode: unknown value {v:?}"))),
                }
            }
            "neutral_band" => self.neutral_band = parse_num(key, v)?,
            "top_k" => self.top_k = parse_num(key, v)?,
            "num_topics" => self.num_topics = parse_num(key, v)?,
            "lda_alpha" => self.lda_alpha = parse_num(key, v)?,
            "lda_beta" => self.lda_beta = parse_num(key, v)?,
            "lda_sweeps" => self.lda_sweeps = parse_num(key, v)?,
            "lda_burn_in" => self.lda_burn_in = parse_num(key, v)?,
            "topic_terms" => self.topic_terms = parse_num(key, v)?,
            "d_model" => self.d_model = parse_num(key, v)?,
            "n_heads" => self.n_heads = parse_num(key, v)?,
            "n_layers" => self.n_layers = parse_num(key, v)?,
            "window" => self.window = parse_num(key, v)?,
            "max_len" => self.max_len = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "residual" => self.residual = parse_bool(key, v)?,
            "ffn_mult" => self.ffn_mult = parse_num(key, v)?,
            "cnn_filters" => self.cnn_filters = parse_num(key, v)?,
            "cnn_widths" => {
                self.cnn_widths = v
                    .split(',')
                    .map(|w| parse_num(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected key = value"))?;
            self.set(k, v).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (a, b, c) = self.ratios();
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios ({a}, {b}, {c}) must lie in [0, 1] and sum to 1"));
        }
        if a <= 0.0 {
            return bad("split_train must be positive".into());
        }
        if self.num_topics == 0 {
            return bad("num_topics must be at least 1".into());
        }
        if !(self.lda_alpha > 0.0 && self.lda_beta > 0.0) {
            return bad("lda_alpha and lda_beta must be positive".into());
        }
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.neutral_band >= 0.0) {
            return bad("neutral_band must be non-negative".into());
        }
        if self.max_len == 0 || self.batch_size == 0 || self.ffn_mult == 0 {
            return bad("max_len, batch_size and ffn_mult must be positive".into());
        }
        if self.cnn_widths.is_empty() || self.cnn_widths.contains(&0) || self.cnn_filters == 0 {
            return bad("cnn_widths and cnn_filters must be non-empty and positive".into());
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative".into());
        }
        Ok(())
    }

    /// Serialise back to the `key = value` format, one key per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "split_train" => self.split_train.to_string(),
            "split_val" => self.split_val.to_string(),
            "split_test" => self.split_test.to_string(),
            "stratified" => self.stratified.to_string(),
            "log_base" => self.log_base.as_str().to_string(),
            "tf_mode" => self.tf_mode.as_str().to_string(),
            "neutral_band" => self.neutral_band.to_string(),
            "top_k" => self.top_k.to_string(),
            "num_topics" => self.num_topics.to_string(),
            "lda_alpha" => self.lda_alpha.to_string(),
            "lda_beta" => self.lda_beta.to_string(),
            "lda_sweeps" => self.lda_sweeps.to_string(),
            "lda_burn_in" => self.lda_burn_in.to_string(),
            "topic_terms" => self.topic_terms.to_string(),
            "d_model" => self.d_model.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "n_layers" => self.n_layers.to_string(),
            "window" => self.window.to_string(),
            "max_len" => self.max_len.to_string(),
            "dropout" => self.dropout.to_string(),
            "residual" => self.residual.to_string(),
            "ffn_mult" => self.ffn_mult.to_string(),
            "cnn_filters" => self.cnn_filters.to_string(),
            "cnn_widths" => self
                .cnn_widths
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "learning_rate" => self.learning_rate.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("d_model", "32").unwrap();
        cfg.set("cnn_widths", "2, 3").unwrap();
        cfg.set("log_base", "base10").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "mem").unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn bad_lines_name_the_line() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("seed = 3\n# c\nnope\n", "run.cfg").unwrap_err();
        assert!(err.to_string().starts_with("run.cfg:3:"), "{err}");
        let err = cfg.apply_text("bogus = 1", "run.cfg").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn invariants_enforced() {
        let mut cfg = RunConfig::default();
        cfg.split_val = 0.2;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.lda_beta = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.num_topics = 0;
        assert!(cfg.validate().is_err());
    }
}
