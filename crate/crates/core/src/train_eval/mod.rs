//! Adam training with cross-entropy, and evaluation reports.

mod metrics;
mod roc;

use std::fmt::Write as _;

use autodiff::{Adam, AdamConfig, Tape};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use metrics::{confusion, metrics, Averages, ClassMetrics, ConfusionMatrix, RateReport};
pub use roc::{macro_auc, roc_auc_ovr, roc_curve, ClassRoc, RocPoint};

use crate::config::RunConfig;
use crate::model::{argmax, Bound, Classifier, EncodedDoc, ModelKind, Mode};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn from_run(run: &RunConfig) -> Self {
        Self {
            learning_rate: run.learning_rate,
            epochs: run.epochs,
            batch_size: run.batch_size,
            seed: run.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when there is no validation split.
    pub val_acc: Option<f64>,
    pub val_f1: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters from the best validation epoch (the last epoch when there
    /// is no validation data).
    pub model: Classifier,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_acc,val_f1\n");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, opt(r.val_acc), opt(r.val_f1));
    }
    out
}

fn labels(docs: &[EncodedDoc]) -> Result<Vec<usize>> {
    docs.iter()
        .map(|d| d.label.ok_or_else(|| Error::Input(format!("document {} has no label", d.id))))
        .collect()
}

/// Mini-batch Adam on mean cross-entropy. Batch order is reshuffled every
/// epoch from `cfg.seed`; dropout masks draw from the same stream.
pub fn train(mut model: Classifier, train: &[EncodedDoc], val: &[EncodedDoc], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    labels(train)?;
    let val_truth = labels(val)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut tape = Tape::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Classifier)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let docs: Vec<&EncodedDoc> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = model.batch(&docs)?;
            tape.reset();
            let p = Bound::bind(&mut tape, &model.params);
            let out = model.forward(&mut tape, &p, &batch, Mode::train(rng.next_u64()))?;
            let loss = tape.cross_entropy(out.logits, &batch.labels)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!("loss is {value} at epoch {epoch}, batch {}", bi + 1)));
            }
            tape.backward(loss)?;
            adam.step(&mut model.params, &p.grads(&tape))?;
            if !model.params.all_finite() {
                return Err(Error::Numerical(format!(
                    "parameters became non-finite at epoch {epoch}, batch {}",
                    bi + 1
                )));
            }
            loss_sum += value * chunk.len() as f64;
        }
        let (val_acc, val_f1) = if val.is_empty() {
            (None, None)
        } else {
            let probs = model.predict_proba(val, cfg.batch_size)?;
            let pred: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
            let r = metrics(&confusion(&val_truth, &pred, model.config.num_classes)?);
            (Some(r.accuracy), Some(r.macro_avg.f1))
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_acc,
            val_f1,
        });
        let score = (val_acc.unwrap_or(0.0), val_f1.unwrap_or(0.0));
        let improved = match &best {
            None => true,
            Some((a, f, _, _)) => val.is_empty() || score.0 > *a || (score.0 == *a && score.1 > *f),
        };
        if improved {
            best = Some((score.0, score.1, epoch, model.clone()));
        }
    }
    let (model, best_epoch) = match best {
        Some((_, _, e, m)) => (m, e),
        None => (model, 0),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub model_kind: ModelKind,
    pub n_examples: usize,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub micro_avg: Averages,
    pub weighted_avg: Averages,
    pub auc: Vec<Option<f64>>,
    pub macro_auc: Option<f64>,
    pub roc: Vec<ClassRoc>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// `class,fpr,tpr,threshold` rows; the origin has an empty threshold.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("class,fpr,tpr,threshold\n");
        for c in &self.roc {
            for p in &c.points {
                let t = p.threshold.map(|t| t.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{}", c.class, p.fpr, p.tpr, t);
            }
        }
        out
    }
}

/// Predict `docs` in eval mode and score against their labels.
pub fn evaluate(model: &Classifier, docs: &[EncodedDoc], batch_size: usize) -> Result<EvalReport> {
    let truth = labels(docs)?;
    let c = model.config.num_classes;
    let probs = if docs.is_empty() {
        Vec::new()
    } else {
        model.predict_proba(docs, batch_size)?
    };
    let pred: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
    let cm = confusion(&truth, &pred, c)?;
    let rates = metrics(&cm);
    let roc = roc_auc_ovr(&probs, &truth, c)?;
    Ok(EvalReport {
        model_kind: model.config.kind,
        n_examples: docs.len(),
        accuracy: rates.accuracy,
        confusion: cm.counts,
        per_class: rates.per_class,
        macro_avg: rates.macro_avg,
        micro_avg: rates.micro_avg,
        weighted_avg: rates.weighted_avg,
        auc: roc.iter().map(|r| r.auc).collect(),
        macro_auc: macro_auc(&roc),
        roc,
    })
}
