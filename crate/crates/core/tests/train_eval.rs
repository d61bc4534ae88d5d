use std::time::Instant;

use poultrylex::lexicon::SentimentLexicon;
use poultrylex::model::{encode_doc, Classifier, EncodedDoc, ModelConfig, ModelKind};
use poultrylex::preprocess::Vocabulary;
use poultrylex::synthetic::separable_corpus;
use poultrylex::train_eval::{confusion, evaluate, history_csv, metrics, roc_auc_ovr, roc_curve, train, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fraction of (positive, negative) pairs ranked correctly, ties counted ½.
fn pair_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

#[test]
fn confusion_hand_tally() {
    let cm = confusion(&[0, 0, 1, 1, 2, 2], &[0, 1, 1, 1, 2, 0], 3).unwrap();
    assert_eq!(cm.counts, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]]);
    let empty = confusion(&[], &[], 3).unwrap();
    assert_eq!(empty.total(), 0);
    assert!(confusion(&[0], &[], 3).is_err());
}

#[test]
fn perfect_diagonal() {
    let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let r = metrics(&confusion(&truth, &truth, 3).unwrap());
    assert_eq!(r.accuracy, 1.0);
    for m in &r.per_class {
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }
}

#[test]
fn binary_fixture() {
    let mut truth = vec![0; 45];
    truth.extend(vec![1; 55]);
    let mut pred = vec![0; 40];
    pred.extend(vec![1; 5]);
    pred.extend(vec![0; 5]);
    pred.extend(vec![1; 50]);
    let cm = confusion(&truth, &pred, 2).unwrap();
    assert_eq!(cm.counts, vec![vec![40, 5], vec![5, 50]]);
    let r = metrics(&cm);
    assert!((r.per_class[1].precision - 50.0 / 55.0).abs() < 1e-15);
    assert!((r.per_class[1].recall - 50.0 / 55.0).abs() < 1e-15);
    assert!((r.accuracy - 0.90).abs() < 1e-15);
    assert!((r.per_class[1].fpr - 5.0 / 45.0).abs() < 1e-15);
    assert!((r.per_class[1].accuracy - 0.90).abs() < 1e-15);
}

#[test]
fn absent_class_is_flagged_zero_and_counted_in_macro() {
    let cm = confusion(&[0, 0, 1], &[0, 1, 1], 3).unwrap();
    let r = metrics(&cm);
    let m = &r.per_class[2];
    assert!(m.precision_undefined && m.recall_undefined && m.f1_undefined);
    assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    let f1s: f64 = r.per_class.iter().map(|m| m.f1).sum();
    assert!((r.macro_avg.f1 - f1s / 3.0).abs() < 1e-15);
}

#[test]
fn auc_examples() {
    let (_, auc) = roc_curve(&[0.9, 0.4, 0.6, 0.1], &[true, true, false, false]).unwrap();
    assert!((auc - 0.75).abs() < 1e-15);
    let (_, auc) = roc_curve(&[0.3; 5], &[true, false, true, false, false]).unwrap();
    assert_eq!(auc, 0.5);
    let (_, auc) = roc_curve(&[0.9, 0.8, 0.2], &[true, true, false]).unwrap();
    assert_eq!(auc, 1.0);
}

#[test]
fn ovr_absent_class_reported_absent() {
    let probs = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1]];
    let roc = roc_auc_ovr(&probs, &[0, 1], 3).unwrap();
    assert_eq!(roc[0].auc, Some(1.0));
    assert_eq!(roc[2].auc, None);
}

proptest! {
    #[test]
    fn accuracy_is_trace_over_total(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..100)) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = confusion(&t, &p, 3).unwrap();
        let r = metrics(&cm);
        prop_assert_eq!(r.accuracy, cm.trace() as f64 / cm.total() as f64);
        for m in &r.per_class {
            for x in [m.precision, m.recall, m.f1, m.accuracy, m.fpr] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }

    #[test]
    fn trapezoid_equals_pair_counting(seed in any::<u64>(), n in 2usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // coarse scores force plenty of ties
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64 / 11.0).collect();
        let mut positive: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        positive[0] = true;
        positive[1] = false;
        let (_, auc) = roc_curve(&scores, &positive).unwrap();
        prop_assert!((auc - pair_auc(&scores, &positive)).abs() < 1e-9);
    }

    #[test]
    fn auc_invariant_under_monotone_transform(seed in any::<u64>(), n in 2usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut positive: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        positive[0] = true;
        positive[1] = false;
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        let a = roc_curve(&scores, &positive).unwrap().1;
        let b = roc_curve(&warped, &positive).unwrap().1;
        prop_assert!((a - b).abs() < 1e-12);
    }
}

fn encoded_separable(n: usize, seed: u64) -> (Vec<EncodedDoc>, Vocabulary) {
    let corpus = separable_corpus(n, seed);
    let vocab = Vocabulary::build(corpus.iter().map(|(s, _)| s));
    let lex = SentimentLexicon::default();
    let docs = corpus
        .iter()
        .map(|(s, l)| encode_doc(s, &vocab, &lex, 16, Some(l.index())))
        .collect();
    (docs, vocab)
}

fn small_config(kind: ModelKind, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        kind,
        vocab_size,
        num_classes: 3,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        window: 2,
        max_len: 16,
        dropout: 0.1,
        residual: true,
        ffn_mult: 4,
        cnn_filters: 8,
        cnn_widths: vec![2, 3],
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (docs, vocab) = encoded_separable(12, 3);
    let model = Classifier::new(small_config(ModelKind::Poultrylex, vocab.len()), 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        batch_size: 4,
        seed: 1,
    };
    let out = train(model.clone(), &docs, &[], &cfg).unwrap();
    assert_eq!(out.model.params, model.params);
}

#[test]
fn empty_train_split_errors() {
    let model = Classifier::new(small_config(ModelKind::Cnn, 10), 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        epochs: 1,
        batch_size: 4,
        seed: 1,
    };
    assert!(train(model, &[], &[], &cfg).is_err());
}

#[test]
fn same_seed_same_history() {
    let (docs, vocab) = encoded_separable(12, 4);
    let cfg = TrainConfig {
        learning_rate: 0.01,
        epochs: 3,
        batch_size: 4,
        seed: 9,
    };
    let run = || {
        let model = Classifier::new(small_config(ModelKind::Poultrylex, vocab.len()), 2).unwrap();
        history_csv(&train(model, &docs, &docs[..6], &cfg).unwrap().history)
    };
    assert_eq!(run(), run());
}

#[test]
fn both_models_fit_separable_corpus() {
    let (docs, vocab) = encoded_separable(32, 7);
    let cfg = TrainConfig {
        learning_rate: 0.01,
        epochs: 200,
        batch_size: 8,
        seed: 7,
    };
    for kind in [ModelKind::Poultrylex, ModelKind::Cnn] {
        let start = Instant::now();
        let model = Classifier::new(small_config(kind, vocab.len()), 7).unwrap();
        let out = train(model, &docs, &docs, &cfg).unwrap();
        let report = evaluate(&out.model, &docs, 16).unwrap();
        assert!(report.accuracy >= 0.95, "{kind}: {}", report.accuracy);
        assert!(start.elapsed().as_secs_f64() < 60.0);
        // eval reproducible bit for bit
        assert_eq!(report.to_json(), evaluate(&out.model, &docs, 5).unwrap().to_json());
    }
}
