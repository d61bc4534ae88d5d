//! Corpus loading, validation and stratified splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [Self::Negative, Self::Neutral, Self::Positive];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Negative => "negative",
            Self::Neutral => "neutral",
            Self::Positive => "positive",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" => Ok(Self::Negative),
            "neutral" => Ok(Self::Neutral),
            "positive" => Ok(Self::Positive),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<SentimentLabel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Guess from the file extension; anything that isn't `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Jsonl,
        }
    }
}

/// A row that could not be turned into a [`Document`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledCorpus {
    pub documents: Vec<Document>,
    pub rejects: Vec<Reject>,
}

impl LabeledCorpus {
    pub fn new(documents: Vec<Document>) -> Self {
        Self {
            documents,
            rejects: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Canonical JSONL: one `{"id","text","label"}` object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&serde_json::to_string(d).expect("document serialises"));
            out.push('\n');
        }
        out
    }

    /// Error out if any document lacks a label.
    pub fn require_labels(&self) -> Result<()> {
        match self.documents.iter().find(|d| d.label.is_none()) {
            Some(d) => Err(Error::Input(format!("document {:?} has no label", d.id))),
            None => Ok(()),
        }
    }
}

#[derive(Deserialize)]
struct RawRow {
    id: Option<serde_json::Value>,
    text: Option<String>,
    label: Option<String>,
}

struct RowChecker<'a> {
    origin: &'a str,
    seen: HashSet<String>,
    corpus: LabeledCorpus,
}

impl<'a> RowChecker<'a> {
    fn new(origin: &'a str) -> Self {
        Self {
            origin,
            seen: HashSet::new(),
            corpus: LabeledCorpus::default(),
        }
    }

    fn reject(&mut self, line: usize, reason: impl Into<String>) {
        self.corpus.rejects.push(Reject {
            line,
            reason: reason.into(),
        });
    }

    fn accept(&mut self, line: usize, id: Option<String>, text: Option<String>, label: Option<String>) -> Result<()> {
        let Some(id) = id.filter(|s| !s.trim().is_empty()) else {
            self.reject(line, "missing id");
            return Ok(());
        };
        let Some(text) = text.filter(|t| !t.trim().is_empty()) else {
            self.reject(line, "missing text");
            return Ok(());
        };
        let label = match label.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(l) => Some(
                l.parse::<SentimentLabel>()
                    .map_err(|e| Error::parse(self.origin, line, e))?,
            ),
        };
        if !self.seen.insert(id.clone()) {
            return Err(Error::parse(self.origin, line, format!("duplicate id {id:?}")));
        }
        self.corpus.documents.push(Document { id, text, label });
        Ok(())
    }
}

pub fn parse_jsonl(text: &str, origin: &str) -> Result<LabeledCorpus> {
    let mut rows = RowChecker::new(origin);
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRow = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                rows.reject(n, format!("malformed JSON: {e}"));
                continue;
            }
        };
        let id = match raw.id {
            Some(serde_json::Value::String(s)) => Some(s),
            Some(serde_json::Value::Number(x)) => Some(x.to_string()),
            _ => None,
        };
        rows.accept(n, id, raw.text, raw.label)?;
    }
    Ok(rows.corpus)
}

pub fn parse_csv(text: &str, origin: &str) -> Result<LabeledCorpus> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(origin, 1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let (id_col, text_col, label_col) = (col("id"), col("text"), col("label"));
    if id_col.is_none() || text_col.is_none() {
        return Err(Error::parse(origin, 1, "header must name at least `id` and `text`"));
    }
    let mut rows = RowChecker::new(origin);
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                rows.reject(line, format!("malformed CSV: {e}"));
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |c: Option<usize>| c.and_then(|c| record.get(c)).map(str::to_string);
        rows.accept(line, field(id_col), field(text_col), field(label_col))?;
    }
    Ok(rows.corpus)
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LabeledCorpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    match format {
        CorpusFormat::Jsonl => parse_jsonl(&text, &origin),
        CorpusFormat::Csv => parse_csv(&text, &origin),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Document>,
    pub val: Vec<Document>,
    pub test: Vec<Document>,
}

/// Largest-remainder apportionment of `n` items over `ratios`.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: [usize; 3] = [0; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).filter(|&i| ratios[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Partition `corpus` into train/val/test. With `stratified`, each label
/// (unlabeled documents form their own group) is apportioned separately so
/// every split's class counts sit within one document of proportional.
pub fn split_corpus(
    corpus: &LabeledCorpus,
    ratios: (f64, f64, f64),
    seed: u64,
    stratified: bool,
) -> Result<Splits> {
    let labels: Vec<Option<SentimentLabel>> = corpus.documents.iter().map(|d| d.label).collect();
    let [a, b, c] = split_indices(&labels, ratios, seed, stratified)?;
    let take = |idx: Vec<usize>| idx.into_iter().map(|i| corpus.documents[i].clone()).collect::<Vec<_>>();
    Ok(Splits {
        train: take(a),
        val: take(b),
        test: take(c),
    })
}

/// [`split_corpus`] on bare labels: ascending item indices for each split.
pub fn split_indices(
    labels: &[Option<SentimentLabel>],
    ratios: (f64, f64, f64),
    seed: u64,
    stratified: bool,
) -> Result<[Vec<usize>; 3]> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|x| !(0.0..=1.0).contains(x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must lie in [0, 1] and sum to 1")));
    }
    if labels.is_empty() {
        return Err(Error::Input("cannot split an empty corpus".into()));
    }
    let active = r.iter().filter(|&&x| x > 0.0).count();
    let mut groups: BTreeMap<Option<SentimentLabel>, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        let key = if stratified { label } else { None };
        groups.entry(key).or_default().push(i);
    }
    if stratified {
        for (label, members) in &groups {
            if members.len() < active {
                let name = label.map_or("unlabeled".to_string(), |l| l.to_string());
                return Err(Error::Input(format!(
                    "class {name} has {} documents but {active} splits are requested; \
                     rerun with stratified = false for a non-stratified split",
                    members.len()
                )));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned: [Vec<usize>; 3] = Default::default();
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let counts = apportion(members.len(), r);
        let mut it = members.iter();
        for (slot, &c) in assigned.iter_mut().zip(&counts) {
            slot.extend(it.by_ref().take(c));
        }
    }
    for idx in assigned.iter_mut() {
        idx.sort_unstable();
    }
    Ok(assigned)
}
