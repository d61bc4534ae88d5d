use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::{Error, Result};

static CANT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(can|won)['’]t\b").unwrap());
static NT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)n['’]t\b").unwrap());
static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:[a-z][a-z0-9+.\-]*://|www\.)\S*").unwrap());
static HTML_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^<>]*>").unwrap());
static HTML_ENTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)&(?:[a-z]+|#[0-9]+|#x[0-9a-f]+);").unwrap());
static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").unwrap());
static EMOJI: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[\p{Extended_Pictographic}\p{Emoji_Modifier}\p{Regional_Indicator}\u{FE0F}\u{200D}\u{20E3}]")
        .unwrap()
});

/// Strip URLs, HTML, @mentions and punctuation; keep hashtag words without
/// the `#`; expand `n't`; lowercase; collapse whitespace.
pub fn clean(text: &str) -> String {
    let t = CANT.replace_all(text, |c: &regex::Captures| {
        if c[1].eq_ignore_ascii_case("won") {
            "will not".to_string()
        } else {
            "can not".to_string()
        }
    });
    let t = NT.replace_all(&t, " not");
    let t = URL.replace_all(&t, " ");
    let t = HTML_TAG.replace_all(&t, " ");
    let t = HTML_ENTITY.replace_all(&t, " ");
    let t = MENTION.replace_all(&t, " ");
    let lower = t.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for c in lower.chars() {
        if c == '\'' || c == '’' {
            continue;
        }
        if c.is_alphanumeric() || c == '_' {
            out.push(c);
        } else {
            out.push(' ');
        }
    }
    collapse_ws(&out)
}

pub(crate) fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Emoji → word table, loaded from `emoji<TAB>word` lines.
#[derive(Clone, Debug, Default)]
pub struct EmojiMap {
    entries: HashMap<String, String>,
    /// Keys sorted longest first so multi-codepoint sequences win.
    order: Vec<String>,
}

impl EmojiMap {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(emoji), Some(word), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(origin, i + 1, "expected `emoji<TAB>word`"));
            };
            let (emoji, word) = (emoji.trim(), word.trim());
            if emoji.is_empty() || word.is_empty() || word.contains(char::is_whitespace) {
                return Err(Error::parse(origin, i + 1, "emoji and single-word replacement required"));
            }
            entries.insert(emoji.to_string(), word.to_lowercase());
        }
        let mut order: Vec<String> = entries.keys().cloned().collect();
        order.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        Ok(Self { entries, order })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn bundled() -> Self {
        Self::parse(include_str!("../../data/emoji.tsv"), "bundled emoji.tsv").expect("bundled emoji map parses")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replace mapped emojis with ` word ` and delete the rest. Text without
    /// any emoji comes back unchanged; otherwise whitespace is collapsed.
    pub fn apply(&self, text: &str) -> String {
        if !EMOJI.is_match(text) {
            return text.to_string();
        }
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        'outer: while let Some(c) = rest.chars().next() {
            for key in &self.order {
                if rest.starts_with(key.as_str()) {
                    out.push(' ');
                    out.push_str(&self.entries[key]);
                    out.push(' ');
                    rest = &rest[key.len()..];
                    continue 'outer;
                }
            }
            if !EMOJI.is_match(c.encode_utf8(&mut [0; 4])) {
                out.push(c);
            }
            rest = &rest[c.len_utf8()..];
        }
        collapse_ws(&out)
    }
}
