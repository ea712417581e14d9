//! Forecast verification: contingency counts, skill scores, reflectivity
//! error, ROC and precision-recall curves, and cross-validation.

mod curves;
mod report;

pub use curves::{curve_csv, pr_curve, roc_curve, CurvePoint, CurvePoints};
pub use report::{
    aggregate, compare_csv, cross_validate, evaluate, fold_values, report_csv, stitch_scores, Aggregate, Evaluation, FoldResult,
    MetricsReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Binary contingency table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

/// Counts with a sample predicted positive when its probability is at
/// least `threshold`.
pub fn confusion(probs: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix> {
    if probs.len() != labels.len() {
        return shape_err(format!("{} predictions for {} labels", probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(Error::Data("confusion matrix of an empty sample".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (false, true) => cm.fn_ += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Probability of detection, false alarm ratio and critical success index;
/// `None` where the denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillScores {
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub csi: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn skill_scores(cm: &ConfusionMatrix) -> SkillScores {
    SkillScores {
        pod: ratio(cm.tp, cm.tp + cm.fn_),
        far: ratio(cm.fp, cm.tp + cm.fp),
        csi: ratio(cm.tp, cm.tp + cm.fn_ + cm.fp),
    }
}

/// Unweighted mean squared difference of two reflectivity fields (dBZ).
pub fn dbz_mse(pred: &Tensor, label: &Tensor) -> Result<f64> {
    if pred.shape() != label.shape() {
        return shape_err(format!(
            "dBZ-MSE of mismatched fields {:?} and {:?}",
            pred.shape(),
            label.shape()
        ));
    }
    let sum: f64 = pred.data().iter().zip(label.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / pred.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let s = skill_scores(&ConfusionMatrix { tp: 3, fn_: 1, fp: 2, tn: 0 });
        assert_eq!((s.pod, s.far, s.csi), (Some(0.75), Some(0.4), Some(0.5)));
        let none = skill_scores(&ConfusionMatrix { tp: 0, fn_: 0, fp: 0, tn: 7 });
        assert_eq!((none.pod, none.far, none.csi), (None, None, None));
        let perfect = skill_scores(&ConfusionMatrix { tp: 4, fn_: 0, fp: 0, tn: 2 });
        assert_eq!((perfect.pod, perfect.far, perfect.csi), (Some(1.0), Some(0.0), Some(1.0)));
    }

    #[test]
    fn confusion_cases() {
        let cm = confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fn_: 0, fp: 0, tn: 1 });
        let cm = confusion(&[0.7; 4], &[0; 4], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 0, fn_: 0, fp: 4, tn: 0 });
        assert_eq!(confusion(&[0.5], &[1], 0.5).unwrap().tp, 1);
        assert!(confusion(&[], &[], 0.5).is_err());
        assert!(confusion(&[0.1], &[], 0.5).is_err());
    }

    #[test]
    fn mse_cases() {
        let a = Tensor::from_fn(&[4, 4], |i| i as f64);
        let b = Tensor::from_fn(&[4, 4], |i| i as f64 + 2.0);
        assert_eq!(dbz_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(dbz_mse(&b, &a).unwrap(), 4.0);
        assert!(dbz_mse(&a, &Tensor::zeros(&[16])).is_err());
    }
}
