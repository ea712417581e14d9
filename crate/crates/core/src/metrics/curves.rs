use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Samples scoring at least this value are predicted positive.
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoints {
    pub points: Vec<CurvePoint>,
    /// Trapezoidal area under the points.
    pub auc: f64,
}

/// Cumulative `(threshold, tp, fp)` at every distinct score, highest first.
fn sweep(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, u64, u64)>> {
    if scores.len() != labels.len() {
        return shape_err(format!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::Data("curve of an empty sample".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("curve scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_tie {
            out.push((scores[i], tp, fp));
        }
    }
    Ok(out)
}

/// False-positive rate against true-positive rate, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<CurvePoints> {
    let steps = sweep(scores, labels)?;
    let &(_, pos, neg) = steps.last().expect("nonempty sweep");
    if pos == 0 || neg == 0 {
        return Err(Error::Data("ROC curve needs both classes".into()));
    }
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    // twice the area in units of one (negative, positive) cell, kept exact
    let mut area2: u128 = 0;
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    for (threshold, tp, fp) in steps {
        area2 += u128::from(fp - prev_fp) * u128::from(tp + prev_tp);
        points.push(CurvePoint {
            threshold,
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
        });
        (prev_tp, prev_fp) = (tp, fp);
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(CurvePoints { points, auc })
}

/// Recall against precision. The curve starts at recall 0 with the
/// precision of the highest-scoring threshold. With no positives every
/// point has recall and precision 0.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<CurvePoints> {
    let steps = sweep(scores, labels)?;
    let &(_, pos, _) = steps.last().expect("nonempty sweep");
    let precision = |tp: u64, fp: u64| tp as f64 / (tp + fp) as f64;
    let recall = |tp: u64| if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
    let (_, tp0, fp0) = steps[0];
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: if pos == 0 { 0.0 } else { precision(tp0, fp0) },
    }];
    for &(threshold, tp, fp) in &steps {
        points.push(CurvePoint {
            threshold,
            x: recall(tp),
            y: if pos == 0 { 0.0 } else { precision(tp, fp) },
        });
    }
    let auc = points.windows(2).map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0).sum();
    Ok(CurvePoints { points, auc })
}

/// `threshold,x,y` rows with a header naming the axes.
pub fn curve_csv(curve: &CurvePoints, x_name: &str, y_name: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", x_name, y_name])?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.x.to_string(), p.y.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}
