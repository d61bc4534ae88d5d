//! Raw post text to token sequences, plus the vocabulary and TF-IDF matrix.

mod clean;
mod porter;
mod tfidf;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use clean::{clean, EmojiMap};
pub use porter::{porter_stem, stem};
pub use tfidf::{tfidf, TfIdfMatrix, TfIdfStats, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

use crate::ingest::Document;
use crate::{Error, Result};

/// Prefix marking a negated word.
pub const NEG_PREFIX: &str = "not_";

/// Tokens that negate the word after them.
pub const NEGATION_CUES: &[&str] = &["not", "no", "never", "cannot"];

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub source_id: String,
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new(source_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self {
            source_id: source_id.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn truncated(&self, max_len: usize) -> &[String] {
        &self.tokens[..self.tokens.len().min(max_len)]
    }
}

pub fn is_negation_cue(token: &str) -> bool {
    NEGATION_CUES.contains(&token)
}

/// Fold each negation cue into the following token as `not_<token>`.
/// Cues stack left to right (`never not sick` → `not_not_sick`); a trailing
/// cue is dropped.
pub fn negation_transform(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut pending = 0usize;
    for t in tokens {
        if is_negation_cue(t) {
            pending += 1;
        } else {
            out.push(format!("{}{t}", NEG_PREFIX.repeat(pending)));
            pending = 0;
        }
    }
    out
}

/// Split `token` into its stacked negation prefix count and base word.
pub fn split_negation(token: &str) -> (usize, &str) {
    let mut n = 0;
    let mut rest = token;
    while let Some(r) = rest.strip_prefix(NEG_PREFIX) {
        if r.is_empty() {
            break;
        }
        rest = r;
        n += 1;
    }
    (n, rest)
}

fn stem_token(token: &str) -> String {
    let (n, base) = split_negation(token);
    format!("{}{}", NEG_PREFIX.repeat(n), stem(base))
}

/// Stopword list and emoji table, applied by [`Preprocessor::tokenize`].
#[derive(Clone, Debug)]
pub struct Preprocessor {
    stopwords: HashSet<String>,
    emoji: EmojiMap,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new(bundled_stopwords(), EmojiMap::bundled())
    }
}

pub fn bundled_stopwords() -> HashSet<String> {
    parse_stopwords(include_str!("../../data/stopwords.txt"))
}

fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

impl Preprocessor {
    /// Negation cues are never treated as stopwords, whatever the list says.
    pub fn new(mut stopwords: HashSet<String>, emoji: EmojiMap) -> Self {
        stopwords.retain(|w| !is_negation_cue(w));
        Self { stopwords, emoji }
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    /// Emoji mapping then cleaning.
    pub fn normalize(&self, text: &str) -> String {
        clean(&self.emoji.apply(text))
    }

    /// Full pipeline: emoji map, clean, whitespace split, stopword removal,
    /// negation transform, stemming. Tokens that stem into a stopword or a
    /// bare cue are dropped so the pipeline is idempotent on its own output.
    pub fn tokenize_text(&self, source_id: &str, text: &str) -> TokenSequence {
        let normalized = self.normalize(text);
        let kept: Vec<String> = normalized
            .split_whitespace()
            .filter(|t| !self.is_stopword(t))
            .map(str::to_string)
            .collect();
        let tokens = negation_transform(&kept)
            .iter()
            .map(|t| stem_token(t))
            .filter(|t| !self.is_stopword(t) && !is_negation_cue(t))
            .collect();
        TokenSequence::new(source_id, tokens)
    }

    pub fn tokenize(&self, doc: &Document) -> TokenSequence {
        self.tokenize_text(&doc.id, &doc.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn negation_examples() {
        assert_eq!(negation_transform(&toks(&["not", "good"])), toks(&["not_good"]));
        assert_eq!(negation_transform(&toks(&["good", "feed"])), toks(&["good", "feed"]));
        assert_eq!(negation_transform(&toks(&["never", "not", "sick"])), toks(&["not_not_sick"]));
        assert_eq!(negation_transform(&toks(&["healthy", "no"])), toks(&["healthy"]));
    }

    #[test]
    fn pipeline_example_sentence() {
        let p = Preprocessor::default();
        let t = p.tokenize_text("1", "weight management in broiler breeders is good");
        assert_eq!(t.tokens, toks(&["weight", "manag", "broiler", "breeder", "good"]));
    }

    #[test]
    fn all_stopwords_vanish() {
        let p = Preprocessor::default();
        assert!(p.tokenize_text("1", "is the of").is_empty());
    }

    #[test]
    fn processed_row_has_no_stopwords_left() {
        let p = Preprocessor::default();
        let row = "weight management broiler breeders push walk recent work continue poultryhealth poultrynutrition";
        let t = p.tokenize_text("r", row);
        assert_eq!(t.len(), row.split(' ').count());
    }

    #[test]
    fn negated_emoji_and_hashtags() {
        let p = Preprocessor::default();
        let t = p.tokenize_text("x", "Birds aren't healthy 😢 #AvianFlu");
        assert_eq!(t.tokens, toks(&["bird", "not_healthi", "sad", "avianflu"]));
    }

    #[test]
    fn cue_list_overrides_stopword_file() {
        let stop: HashSet<String> = ["not", "the"].iter().map(|s| s.to_string()).collect();
        let p = Preprocessor::new(stop, EmojiMap::default());
        assert_eq!(p.tokenize_text("x", "not the good").tokens, toks(&["not_good"]));
    }

    proptest! {
        #[test]
        fn pipeline_idempotent(words in proptest::collection::vec("[a-zA-Z' ]{1,12}|not|no|never|the|is|#[a-z]{3,8}|😊|!", 0..20)) {
            let p = Preprocessor::default();
            let text = words.join(" ");
            let once = p.tokenize_text("d", &text);
            let twice = p.tokenize_text("d", &once.tokens.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn tokens_are_nonempty_without_whitespace(text in "\\PC{0,80}") {
            let p = Preprocessor::default();
            for t in p.tokenize_text("d", &text).tokens {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.contains(char::is_whitespace));
            }
        }

        #[test]
        fn negation_shrinks_by_at_most_cue_count(words in proptest::collection::vec("not|no|never|good|bad|feed", 0..30)) {
            let tokens: Vec<String> = words;
            let cues = tokens.iter().filter(|t| is_negation_cue(t)).count();
            let out = negation_transform(&tokens);
            prop_assert!(tokens.len() - out.len() <= cues);
        }
    }
}
