//! ROC and precision-recall curves with their areas, on hand-made scores.

use tsmt::metrics::{confusion, curve_csv, pr_curve, roc_curve, skill_scores};

fn main() -> tsmt::Result<()> {
    let scores = [0.95, 0.9, 0.8, 0.7, 0.62, 0.55, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05];
    let labels = [1, 1, 0, 1, 1, 0, 1, 0, 0, 1, 0, 0];

    let roc = roc_curve(&scores, &labels)?;
    let pr = pr_curve(&scores, &labels)?;
    print!("{}", curve_csv(&roc, "fpr", "tpr")?);
    println!("ROC-AUC {:.4}, PR-AUC {:.4}", roc.auc, pr.auc);

    // skill at each threshold on the curve
    for p in roc.points.iter().skip(1).step_by(3) {
        let s = skill_scores(&confusion(&scores, &labels, p.threshold)?);
        println!("threshold {:.2}: POD {:?} FAR {:?} CSI {:?}", p.threshold, s.pod, s.far, s.csi);
    }

    let separable = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])?;
    println!("perfect separator ROC-AUC {}", separable.auc);
    Ok(())
}
