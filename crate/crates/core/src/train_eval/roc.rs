use serde::Serialize;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score cut-off (`score >= threshold` is positive); `None` for the
    /// origin, which sits above every score.
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassRoc {
    pub class: usize,
    /// Absent when the class has no positives or no negatives.
    pub auc: Option<f64>,
    pub points: Vec<RocPoint>,
}

/// ROC points from a sweep over the distinct scores, highest first, and the
/// trapezoid area under them. Tied scores move diagonally, which credits
/// each tied positive/negative pair with one half. `None` when either class
/// is empty.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Option<(Vec<RocPoint>, f64)> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // trapezoid in count space, normalised once at the end
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: Some(t),
        });
    }
    Some((points, area / (n_pos as f64 * n_neg as f64)))
}

/// One-vs-rest ROC for every class. Rows of `probs` must sum to 1 ± 1e-6.
pub fn roc_auc_ovr(probs: &[Vec<f64>], truth: &[usize], num_classes: usize) -> Result<Vec<ClassRoc>> {
    if probs.len() != truth.len() {
        return Err(Error::Input(format!("{} score rows but {} labels", probs.len(), truth.len())));
    }
    for (i, row) in probs.iter().enumerate() {
        if row.len() != num_classes {
            return Err(Error::Input(format!("score row {i} has {} entries, expected {num_classes}", row.len())));
        }
        let s: f64 = row.iter().sum();
        if !s.is_finite() || (s - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("score row {i} sums to {s}, not 1")));
        }
    }
    Ok((0..num_classes)
        .map(|c| {
            let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
            let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            match roc_curve(&scores, &positive) {
                Some((points, auc)) => ClassRoc {
                    class: c,
                    auc: Some(auc),
                    points,
                },
                None => ClassRoc {
                    class: c,
                    auc: None,
                    points: Vec::new(),
                },
            }
        })
        .collect())
}

/// Mean over the classes whose AUC is defined.
pub fn macro_auc(curves: &[ClassRoc]) -> Option<f64> {
    let defined: Vec<f64> = curves.iter().filter_map(|c| c.auc).collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_ends_at_one_one() {
        let (pts, _) = roc_curve(&[0.2, 0.8, 0.5], &[false, true, true]).unwrap();
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(pts.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(roc_curve(&[0.1, 0.9], &[true, true]).is_none());
    }

    #[test]
    fn rejects_unnormalised_rows() {
        assert!(roc_auc_ovr(&[vec![0.5, 0.6]], &[0], 2).is_err());
    }
}
