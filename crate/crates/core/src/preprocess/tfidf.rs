use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use super::TokenSequence;
use crate::config::{LogBase, TfMode};
use crate::{Error, Result};

pub const UNK: usize = 0;
pub const PAD: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Dense term index. Index 0 is `<unk>`, index 1 is `<pad>`, the rest are
/// corpus terms in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a TokenSequence>) -> Self {
        let set: BTreeSet<&str> = docs
            .into_iter()
            .flat_map(|d| d.tokens.iter().map(String::as_str))
            .collect();
        Self::from_terms(set.into_iter().map(str::to_string))
            .expect("set has no duplicates or reserved tokens")
    }

    /// Rebuild from the non-reserved terms in index order.
    pub fn from_terms(terms: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all = vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()];
        all.extend(terms);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("vocabulary term {t:?} appears twice")));
            }
        }
        Ok(Self { terms: all, index })
    }

    /// Total size including the two reserved entries.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn term(&self, id: usize) -> &str {
        &self.terms[id]
    }

    /// Terms after the reserved entries, in index order.
    pub fn terms(&self) -> &[String] {
        &self.terms[2..]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// One term per line, reserved entries excluded.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in self.terms() {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_terms(text.lines().filter(|l| !l.is_empty()).map(str::to_string))
    }
}

/// Corpus statistics behind the matrix: `n_docs` and per-term document frequency.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TfIdfStats {
    pub n_docs: usize,
    pub df: Vec<usize>,
}

/// One row per document, one column per non-reserved vocabulary term.
#[derive(Clone, Debug, PartialEq)]
pub struct TfIdfMatrix {
    pub doc_ids: Vec<String>,
    pub terms: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub stats: TfIdfStats,
    pub log_base: LogBase,
    pub tf_mode: TfMode,
}

impl TfIdfMatrix {
    /// CSV with an `id` column followed by one column per term.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for t in &self.terms {
            out.push(',');
            out.push_str(t);
        }
        out.push('\n');
        for (id, row) in self.doc_ids.iter().zip(&self.rows) {
            out.push_str(&csv_field(id));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `tf(w, d) × log(N / DF(w))` over `docs`, where `tf` is the binary presence
/// indicator (or the raw count under [`TfMode::Count`]) and `N`, `DF` are
/// taken from `docs`. Terms that occur in no document score 0.
pub fn tfidf(docs: &[TokenSequence], vocab: &Vocabulary, log_base: LogBase, tf_mode: TfMode) -> TfIdfMatrix {
    let v = vocab.len();
    let counts: Vec<Vec<(usize, usize)>> = docs
        .iter()
        .map(|d| {
            let mut c: HashMap<usize, usize> = HashMap::new();
            for t in &d.tokens {
                if let Some(id) = vocab.get(t) {
                    *c.entry(id).or_default() += 1;
                }
            }
            let mut c: Vec<_> = c.into_iter().collect();
            c.sort_unstable();
            c
        })
        .collect();
    let mut df = vec![0usize; v];
    for doc in &counts {
        for &(id, _) in doc {
            df[id] += 1;
        }
    }
    let n = docs.len();
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { log_base.log(n as f64 / d as f64) })
        .collect();
    let rows = counts
        .iter()
        .map(|doc| {
            let mut row = vec![0.0; v - 2];
            for &(id, c) in doc {
                if id < 2 {
                    continue;
                }
                let tf = match tf_mode {
                    TfMode::Binary => 1.0,
                    TfMode::Count => c as f64,
                };
                row[id - 2] = tf * idf[id];
            }
            row
        })
        .collect();
    TfIdfMatrix {
        doc_ids: docs.iter().map(|d| d.source_id.clone()).collect(),
        terms: vocab.terms().to_vec(),
        rows,
        stats: TfIdfStats {
            n_docs: n,
            df: df[2..].to_vec(),
        },
        log_base,
        tf_mode,
    }
}
