use serde::{Deserialize, Serialize};

use crate::lexicon::SentimentLexicon;
use crate::preprocess::{TokenSequence, Vocabulary, PAD, UNK};
use crate::{Error, Result};

/// Lexicon-sign embedding row for a neutral or unknown token (and for PAD).
pub const SIGN_NEUTRAL: usize = 1;

/// A document as model input: vocabulary ids plus the lexicon-sign row of
/// every token (0 negative, 1 neutral, 2 positive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedDoc {
    pub id: String,
    pub ids: Vec<usize>,
    pub signs: Vec<usize>,
    pub label: Option<usize>,
}

/// Truncate to `max_len`; an empty document becomes a single `<unk>` so that
/// every row has at least one real position.
pub fn encode_doc(
    seq: &TokenSequence,
    vocab: &Vocabulary,
    lexicon: &SentimentLexicon,
    max_len: usize,
    label: Option<usize>,
) -> EncodedDoc {
    let tokens = seq.truncated(max_len.max(1));
    let (ids, signs) = if tokens.is_empty() {
        (vec![UNK], vec![SIGN_NEUTRAL])
    } else {
        (
            vocab.encode(tokens),
            tokens
                .iter()
                .map(|t| (lexicon.token_sign(t) + 1) as usize)
                .collect(),
        )
    };
    EncodedDoc {
        id: seq.source_id.clone(),
        ids,
        signs,
        label,
    }
}

/// Right-padded `B × L` block of documents.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub b: usize,
    pub l: usize,
    pub ids: Vec<usize>,
    pub signs: Vec<usize>,
    /// `true` at real positions, `false` at PAD.
    pub mask: Vec<bool>,
    pub labels: Vec<usize>,
}

impl Batch {
    /// `l` is the longest document, raised to `min_len`.
    pub fn new(docs: &[&EncodedDoc], min_len: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let l = docs.iter().map(|d| d.ids.len()).max().unwrap_or(0).max(min_len).max(1);
        let b = docs.len();
        let mut batch = Self {
            b,
            l,
            ids: vec![PAD; b * l],
            signs: vec![SIGN_NEUTRAL; b * l],
            mask: vec![false; b * l],
            labels: Vec::with_capacity(b),
        };
        for (r, d) in docs.iter().enumerate() {
            if d.ids.is_empty() || d.ids.len() != d.signs.len() {
                return Err(Error::Input(format!("document {} is empty or malformed", d.id)));
            }
            for (t, (&id, &s)) in d.ids.iter().zip(&d.signs).enumerate() {
                batch.ids[r * l + t] = id;
                batch.signs[r * l + t] = s;
                batch.mask[r * l + t] = true;
            }
            if let Some(y) = d.label {
                batch.labels.push(y);
            }
        }
        if !batch.labels.is_empty() && batch.labels.len() != b {
            return Err(Error::Input("batch mixes labelled and unlabelled documents".into()));
        }
        Ok(batch)
    }

    pub fn real_len(&self, row: usize) -> usize {
        self.mask[row * self.l..(row + 1) * self.l].iter().filter(|&&m| m).count()
    }

    /// `B × L × L` attention mask. A real query sees real keys within
    /// `window` positions (all real keys when `None`); a PAD query sees only
    /// itself so its row still normalises.
    pub fn attention_mask(&self, window: Option<usize>) -> Vec<bool> {
        let l = self.l;
        let mut out = vec![false; self.b * l * l];
        for r in 0..self.b {
            let m = &self.mask[r * l..(r + 1) * l];
            for i in 0..l {
                let row = &mut out[(r * l + i) * l..(r * l + i + 1) * l];
                if !m[i] {
                    row[i] = true;
                    continue;
                }
                for j in 0..l {
                    row[j] = m[j] && window.is_none_or(|w| i.abs_diff(j) <= w);
                }
            }
        }
        out
    }

    /// `B × 1 × L` weights for the mean over real positions.
    pub fn pool_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.b * self.l];
        for r in 0..self.b {
            let n = self.real_len(r) as f64;
            for t in 0..self.l {
                if self.mask[r * self.l + t] {
                    w[r * self.l + t] = 1.0 / n;
                }
            }
        }
        w
    }
}
