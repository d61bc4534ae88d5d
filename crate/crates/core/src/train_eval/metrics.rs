use serde::Serialize;

use crate::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// One-vs-rest `(tp, fp, fn, tn)` for class `c`.
    pub fn one_vs_rest(&self, c: usize) -> (usize, usize, usize, usize) {
        let tp = self.counts[c][c];
        let fp: usize = (0..self.counts.len()).map(|r| self.counts[r][c]).sum::<usize>() - tp;
        let fn_: usize = self.counts[c].iter().sum::<usize>() - tp;
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut counts = vec![vec![0; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Input(format!("label ({t}, {p}) outside 0..{num_classes}")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// `num / den`, or 0 with the flag set when `den == 0`.
fn guarded(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

fn f1_of(p: f64, r: f64) -> (f64, bool) {
    guarded(2.0 * p * r, p + r)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// `(TP + TN) / total` for this class against the rest.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when the value above fell back to 0 on a zero denominator.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
    /// `FP / (FP + TN)`.
    pub fpr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean over every class, flagged-zero classes included.
    pub macro_avg: Averages,
    /// From summed one-vs-rest counts.
    pub micro_avg: Averages,
    /// Class means weighted by support.
    pub weighted_avg: Averages,
}

pub fn metrics(cm: &ConfusionMatrix) -> RateReport {
    let c = cm.num_classes();
    let total = cm.total() as f64;
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let (tp, fp, fn_, tn) = cm.one_vs_rest(k);
            let (precision, precision_undefined) = guarded(tp as f64, (tp + fp) as f64);
            let (recall, recall_undefined) = guarded(tp as f64, (tp + fn_) as f64);
            let (f1, f1_undefined) = f1_of(precision, recall);
            ClassMetrics {
                class: k,
                support: tp + fn_,
                tp,
                fp,
                fn_,
                tn,
                accuracy: guarded((tp + tn) as f64, total).0,
                precision,
                recall,
                f1,
                precision_undefined,
                recall_undefined,
                f1_undefined,
                fpr: guarded(fp as f64, (fp + tn) as f64).0,
            }
        })
        .collect();

    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c.max(1) as f64;
    let macro_avg = Averages {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };

    let (tp, fp, fn_) = per_class
        .iter()
        .fold((0, 0, 0), |(a, b, d), m| (a + m.tp, b + m.fp, d + m.fn_));
    let micro_p = guarded(tp as f64, (tp + fp) as f64).0;
    let micro_r = guarded(tp as f64, (tp + fn_) as f64).0;
    let micro_avg = Averages {
        precision: micro_p,
        recall: micro_r,
        f1: f1_of(micro_p, micro_r).0,
    };

    let weighted = |f: fn(&ClassMetrics) -> f64| {
        guarded(per_class.iter().map(|m| f(m) * m.support as f64).sum(), total).0
    };
    let weighted_avg = Averages {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    };

    RateReport {
        accuracy: guarded(cm.trace() as f64, total).0,
        per_class,
        macro_avg,
        micro_avg,
        weighted_avg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ovr_counts_partition_total() {
        let cm = confusion(&[0, 0, 1, 1, 2, 2], &[0, 1, 1, 1, 2, 0], 3).unwrap();
        for k in 0..3 {
            let (a, b, c, d) = cm.one_vs_rest(k);
            assert_eq!(a + b + c + d, 6);
        }
        assert_eq!(cm.one_vs_rest(0), (1, 1, 1, 3));
    }

    #[test]
    fn out_of_range_label_errors() {
        assert!(confusion(&[3], &[0], 3).is_err());
        assert!(confusion(&[0, 1], &[0], 3).is_err());
    }

    #[test]
    fn micro_equals_accuracy_for_single_label() {
        let cm = confusion(&[0, 0, 1, 2, 2, 1, 0], &[0, 2, 1, 2, 1, 1, 0], 3).unwrap();
        let r = metrics(&cm);
        assert!((r.micro_avg.f1 - r.accuracy).abs() < 1e-15);
        assert!((r.micro_avg.precision - r.accuracy).abs() < 1e-15);
    }
}
