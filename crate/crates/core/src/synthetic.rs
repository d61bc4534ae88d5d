//! Seeded synthetic corpora with known structure, for sanity checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::SentimentLabel;
use crate::preprocess::TokenSequence;

const MARKERS: [[&str; 4]; 3] = [
    ["sick", "dead", "cull", "outbreak"],
    ["shed", "barn", "pen", "coop"],
    ["thrive", "healthy", "gain", "robust"],
];
const NOISE: [&str; 8] = ["hen", "flock", "feed", "egg", "farm", "bird", "water", "litter"];

/// `n` documents, classes in rotation. Each holds 2 or 3 marker words of its
/// class mixed with 3 to 6 shared noise words, so a bag of words separates
/// the classes perfectly.
pub fn separable_corpus(n: usize, seed: u64) -> Vec<(TokenSequence, SentimentLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = SentimentLabel::ALL[i % 3];
            let mut tokens: Vec<String> = Vec::new();
            for _ in 0..rng.random_range(2..=3) {
                tokens.push(MARKERS[label.index()][rng.random_range(0..4)].to_string());
            }
            for _ in 0..rng.random_range(3..=6) {
                tokens.push(NOISE[rng.random_range(0..NOISE.len())].to_string());
            }
            tokens.shuffle(&mut rng);
            (TokenSequence::new(format!("s{i:03}"), tokens), label)
        })
        .collect()
}

/// A corpus drawn from known topics, with each topic's true top terms.
pub struct PlantedCorpus {
    pub docs: Vec<TokenSequence>,
    pub top_terms: Vec<Vec<String>>,
}

/// `k` topics over disjoint ten-word vocabularies. Five head words per topic
/// share 70% of its mass in clearly separated steps and the tail shares the
/// rest. Each document takes 80% of its tokens from one topic.
pub fn planted_topics(k: usize, n_docs: usize, doc_len: usize, seed: u64) -> PlantedCorpus {
    let head = [0.18, 0.16, 0.14, 0.12, 0.10];
    let tail = 0.30 / 5.0;
    let words: Vec<Vec<String>> = (0..k)
        .map(|t| (0..10).map(|w| format!("t{t}w{w}")).collect())
        .collect();
    let probs: Vec<f64> = head.iter().copied().chain(std::iter::repeat_n(tail, 5)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n_docs)
        .map(|d| {
            let main = d % k;
            let tokens = (0..doc_len)
                .map(|_| {
                    let topic = if k == 1 || rng.random::<f64>() < 0.8 {
                        main
                    } else {
                        let other = rng.random_range(0..k - 1);
                        if other >= main {
                            other + 1
                        } else {
                            other
                        }
                    };
                    let mut u = rng.random::<f64>();
                    let mut w = probs.len() - 1;
                    for (i, &p) in probs.iter().enumerate() {
                        if u < p {
                            w = i;
                            break;
                        }
                        u -= p;
                    }
                    words[topic][w].clone()
                })
                .collect();
            TokenSequence::new(format!("p{d:04}"), tokens)
        })
        .collect();
    PlantedCorpus {
        docs,
        top_terms: words.iter().map(|ws| ws[..5].to_vec()).collect(),
    }
}
