use poultrylex::config::{LogBase, TfMode};
use poultrylex::lexicon::{polarity_fm, polarity_pc, score_document, SentimentLexicon};
use poultrylex::preprocess::{negation_transform, tfidf, TokenSequence, Vocabulary, NEGATION_CUES, NEG_PREFIX};
use proptest::prelude::*;

/// Two passes: document frequencies first, then one score per (doc, term).
fn brute_tfidf(docs: &[Vec<String>], terms: &[String], base: LogBase, mode: TfMode) -> Vec<Vec<f64>> {
    let n = docs.len() as f64;
    let df: Vec<usize> = terms.iter().map(|t| docs.iter().filter(|d| d.contains(t)).count()).collect();
    docs.iter()
        .map(|d| {
            terms
                .iter()
                .zip(&df)
                .map(|(t, &f)| {
                    let count = d.iter().filter(|x| *x == t).count();
                    if count == 0 || f == 0 {
                        return 0.0;
                    }
                    let tf = match mode {
                        TfMode::Binary => 1.0,
                        TfMode::Count => count as f64,
                    };
                    let ratio = n / f as f64;
                    tf * match base {
                        LogBase::Natural => ratio.ln(),
                        LogBase::Base10 => ratio.log10(),
                    }
                })
                .collect()
        })
        .collect()
}

/// Left-to-right single pass written independently of the library.
fn negation_oracle(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut prefix = String::new();
    for t in tokens {
        if NEGATION_CUES.iter().any(|c| c == t) {
            prefix.push_str(NEG_PREFIX);
        } else {
            out.push(format!("{prefix}{t}"));
            prefix.clear();
        }
    }
    out
}

proptest! {
    #[test]
    fn tfidf_matches_brute_force(
        docs in proptest::collection::vec(proptest::collection::vec("[a-f]{1,2}", 0..12), 1..=20),
        base10 in any::<bool>(),
        count in any::<bool>(),
    ) {
        let base = if base10 { LogBase::Base10 } else { LogBase::Natural };
        let mode = if count { TfMode::Count } else { TfMode::Binary };
        let seqs: Vec<TokenSequence> = docs
            .iter()
            .enumerate()
            .map(|(i, d)| TokenSequence::new(i.to_string(), d.clone()))
            .collect();
        let vocab = Vocabulary::build(&seqs);
        let m = tfidf(&seqs, &vocab, base, mode);
        let oracle = brute_tfidf(&docs, vocab.terms(), base, mode);
        for (row, want) in m.rows.iter().zip(&oracle) {
            for (a, b) in row.iter().zip(want) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn negation_matches_oracle(tokens in proptest::collection::vec("not|no|never|cannot|good|sick|feed|hen", 0..25)) {
        prop_assert_eq!(negation_transform(&tokens), negation_oracle(&tokens));
    }

    #[test]
    fn polarity_bounded(pos in 0.0f64..1e6, neg in 0.0f64..1e6) {
        let p = polarity_pc(pos, neg);
        prop_assert!((-1.0..=1.0).contains(&p));
        prop_assert!((-1.0..=1.0).contains(&polarity_fm(pos, neg)));
    }
}

#[test]
fn negated_token_flips_polarity() {
    let lex = SentimentLexicon::bundled().stemmed();
    let good = score_document(&["good".to_string()], &lex, 0.1);
    let not_good = score_document(&["not_good".to_string()], &lex, 0.1);
    assert!(good.p_c > 0.0);
    assert_eq!(not_good.p_c, -good.p_c);
}
