//! Lexicon polarity scoring, emotion counts, and corpus term frequencies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::SentimentLabel;
use crate::preprocess::{split_negation, stem, TokenSequence};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Anger,
    Anticipation,
    Disgust,
    Fear,
    Joy,
    Sadness,
    Surprise,
    Trust,
}

impl Emotion {
    pub const ALL: [Emotion; 8] = [
        Self::Anger,
        Self::Anticipation,
        Self::Disgust,
        Self::Fear,
        Self::Joy,
        Self::Sadness,
        Self::Surprise,
        Self::Trust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Anger => "anger",
            Self::Anticipation => "anticipation",
            Self::Disgust => "disgust",
            Self::Fear => "fear",
            Self::Joy => "joy",
            Self::Sadness => "sadness",
            Self::Surprise => "surprise",
            Self::Trust => "trust",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown emotion {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub pos_weight: f64,
    pub neg_weight: f64,
    pub emotions: BTreeSet<Emotion>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SentimentLexicon {
    entries: BTreeMap<String, LexiconEntry>,
}

impl SentimentLexicon {
    /// Parse `term<TAB>pos<TAB>neg<TAB>emotion,emotion,…` lines; the emotion
    /// column may be empty or absent. Lines starting with `#` are comments.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !(3..=4).contains(&cols.len()) {
                return Err(Error::parse(origin, n, "expected term<TAB>pos<TAB>neg[<TAB>emotions]"));
            }
            let term = cols[0].trim().to_lowercase();
            if term.is_empty() {
                return Err(Error::parse(origin, n, "empty term"));
            }
            let weight = |s: &str| -> Result<f64> {
                let w: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(origin, n, format!("bad weight {s:?}")))?;
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::parse(origin, n, format!("weight {w} must be finite and non-negative")));
                }
                Ok(w)
            };
            let entry = LexiconEntry {
                pos_weight: weight(cols[1])?,
                neg_weight: weight(cols[2])?,
                emotions: cols
                    .get(3)
                    .map(|e| {
                        e.split(',')
                            .filter(|s| !s.trim().is_empty())
                            .map(|s| s.parse().map_err(|m: String| Error::parse(origin, n, m)))
                            .collect::<Result<BTreeSet<_>>>()
                    })
                    .transpose()?
                    .unwrap_or_default(),
            };
            if entry.pos_weight == 0.0 && entry.neg_weight == 0.0 && entry.emotions.is_empty() {
                return Err(Error::parse(origin, n, format!("entry {term:?} carries no information")));
            }
            entries.insert(term, entry);
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The small lexicon shipped with the crate, keyed by surface form.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/lexicon.tsv"), "bundled lexicon.tsv").expect("bundled lexicon parses")
    }

    pub fn insert(&mut self, term: impl Into<String>, entry: LexiconEntry) {
        self.entries.insert(term.into(), entry);
    }

    pub fn get(&self, term: &str) -> Option<&LexiconEntry> {
        self.entries.get(term)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Re-key every entry by its stem so it matches pipeline tokens. Terms
    /// that collide keep the larger weights and the union of emotions.
    pub fn stemmed(&self) -> Self {
        let mut out: BTreeMap<String, LexiconEntry> = BTreeMap::new();
        for (term, e) in &self.entries {
            let key = stem(term);
            match out.get_mut(&key) {
                Some(prev) => {
                    prev.pos_weight = prev.pos_weight.max(e.pos_weight);
                    prev.neg_weight = prev.neg_weight.max(e.neg_weight);
                    prev.emotions.extend(e.emotions.iter().copied());
                }
                None => {
                    out.insert(key, e.clone());
                }
            }
        }
        Self { entries: out }
    }

    /// Multiply every weight by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for e in out.entries.values_mut() {
            e.pos_weight *= k;
            e.neg_weight *= k;
        }
        out
    }

    /// `(pos, neg)` contribution of one token. An odd number of `not_`
    /// prefixes swaps the base term's weights.
    pub fn contribution(&self, token: &str) -> Option<(f64, f64)> {
        let (negations, base) = split_negation(token);
        let e = self.entries.get(base)?;
        Some(if negations % 2 == 1 {
            (e.neg_weight, e.pos_weight)
        } else {
            (e.pos_weight, e.neg_weight)
        })
    }

    /// -1, 0 or +1: the sign of the token's net polarity.
    pub fn token_sign(&self, token: &str) -> i8 {
        match self.contribution(token) {
            Some((p, n)) if p > n => 1,
            Some((p, n)) if n > p => -1,
            _ => 0,
        }
    }
}

/// `(pos - neg) / (pos + neg)`; 0 when both are 0.
pub fn polarity_pc(pos: f64, neg: f64) -> f64 {
    let total = pos + neg;
    if total == 0.0 {
        return 0.0;
    }
    (pos - neg) / total
}

/// Dominant-score polarity: `pos / total` when `pos > neg`, `-neg / total`
/// when `neg > pos`, and 0 on ties (including both zero).
pub fn polarity_fm(pos: f64, neg: f64) -> f64 {
    let total = pos + neg;
    if total == 0.0 || pos == neg {
        return 0.0;
    }
    if pos > neg {
        pos / total
    } else {
        -neg / total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolarityScore {
    pub pos_score: f64,
    pub neg_score: f64,
    pub p_c: f64,
    pub f_m: f64,
    pub label: SentimentLabel,
    /// No token matched the lexicon; `p_c` and `f_m` are 0 by convention.
    pub no_hits: bool,
}

pub fn label_for(p_c: f64, neutral_band: f64) -> SentimentLabel {
    if p_c > neutral_band {
        SentimentLabel::Positive
    } else if p_c < -neutral_band {
        SentimentLabel::Negative
    } else {
        SentimentLabel::Neutral
    }
}

pub fn score_document(tokens: &[String], lex: &SentimentLexicon, neutral_band: f64) -> PolarityScore {
    let (mut pos, mut neg, mut hits) = (0.0, 0.0, 0usize);
    for t in tokens {
        if let Some((p, n)) = lex.contribution(t) {
            pos += p;
            neg += n;
            hits += 1;
        }
    }
    let p_c = polarity_pc(pos, neg);
    PolarityScore {
        pos_score: pos,
        neg_score: neg,
        p_c,
        f_m: polarity_fm(pos, neg),
        label: label_for(p_c, neutral_band),
        no_hits: hits == 0 || pos + neg == 0.0,
    }
}

/// Occurrences per emotion: each token found verbatim in the lexicon adds one
/// to every emotion its entry carries. Negated tokens are not looked up.
pub fn emotion_histogram(corpus: &[TokenSequence], lex: &SentimentLexicon) -> BTreeMap<Emotion, usize> {
    let mut hist: BTreeMap<Emotion, usize> = Emotion::ALL.iter().map(|&e| (e, 0)).collect();
    for doc in corpus {
        for t in &doc.tokens {
            if let Some(e) = lex.get(t) {
                for em in &e.emotions {
                    *hist.get_mut(em).unwrap() += 1;
                }
            }
        }
    }
    hist
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TermCount {
    pub term: String,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TermFrequencyTable {
    counts: BTreeMap<String, usize>,
    total: usize,
}

impl TermFrequencyTable {
    pub fn get(&self, term: &str) -> usize {
        self.counts.get(term).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &usize)> {
        self.counts.iter()
    }

    /// The `k` most frequent terms; equal counts are ordered lexicographically.
    pub fn top_k(&self, k: usize) -> Vec<TermCount> {
        let mut all: Vec<(&String, &usize)> = self.counts.iter().collect();
        all.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        all.into_iter()
            .take(k)
            .map(|(t, &c)| TermCount {
                term: t.clone(),
                count: c,
            })
            .collect()
    }
}

pub fn term_frequencies(corpus: &[TokenSequence]) -> TermFrequencyTable {
    let mut table = TermFrequencyTable::default();
    for doc in corpus {
        for t in &doc.tokens {
            *table.counts.entry(t.clone()).or_default() += 1;
            table.total += 1;
        }
    }
    table
}
