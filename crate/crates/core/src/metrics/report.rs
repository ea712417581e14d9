use serde::{Deserialize, Serialize};

use super::{confusion, dbz_mse, skill_scores, ConfusionMatrix};
use crate::data::{Dataset, Normalization};
use crate::error::{config_err, Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::tensor::Tensor;
use crate::train::{init_params, train, TrainConfig};

/// Samples per evaluation forward pass.
const EVAL_CHUNK: usize = 32;

/// Scores and labels of one evaluated sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub csi: Option<f64>,
    /// Mean dBZ-MSE over samples; `None` without a regression head.
    pub dbz_mse: Option<f64>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Runs `model` in evaluation mode over `indices` and scores it at
/// `threshold`.
pub fn evaluate(
    model: &mut Model,
    dataset: &Dataset,
    indices: &[usize],
    norm: &Normalization,
    threshold: f64,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut scores = Vec::with_capacity(indices.len());
    let mut mse_sum = 0.0;
    let mut has_field = false;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = dataset.batch(chunk, norm)?;
        let pred = model.predict(&batch, &norm.radar)?;
        scores.extend_from_slice(&pred.scores);
        if let Some(field) = pred.field_dbz {
            has_field = true;
            mse_sum += dbz_mse(&field, &batch.reg_labels_dbz)? * chunk.len() as f64;
        }
    }
    let labels: Vec<u8> = indices.iter().map(|&i| dataset.label(i)).collect();
    let cm = confusion(&scores, &labels, threshold)?;
    let skill = skill_scores(&cm);
    Ok(Evaluation {
        confusion: cm,
        pod: skill.pod,
        far: skill.far,
        csi: skill.csi,
        dbz_mse: has_field.then(|| mse_sum / indices.len() as f64),
        scores,
        labels,
    })
}

/// Metrics of one held-out fold. Classification scores are undefined
/// (`None`) when the fold has no positives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub samples: usize,
    pub positives: usize,
    pub confusion: ConfusionMatrix,
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub csi: Option<f64>,
    pub dbz_mse: Option<f64>,
}

impl FoldResult {
    pub fn from_evaluation(fold: usize, eval: &Evaluation) -> Self {
        let positives = eval.labels.iter().filter(|&&l| l == 1).count();
        let defined = positives > 0;
        if !defined {
            log::warn!("fold {fold} has no positive samples; its POD, FAR and CSI are excluded");
        }
        Self {
            fold,
            samples: eval.labels.len(),
            positives,
            confusion: eval.confusion,
            pod: eval.pod.filter(|_| defined),
            far: eval.far.filter(|_| defined),
            csi: eval.csi.filter(|_| defined),
            dbz_mse: eval.dbz_mse,
        }
    }
}

/// Mean and population standard deviation of the defined fold values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Folds contributing.
    pub n: usize,
    /// Folds where the metric was undefined.
    pub excluded: usize,
}

impl Aggregate {
    /// `mean ± std` with four decimals, or `undefined`.
    pub fn display(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
            _ => "undefined".into(),
        }
    }
}

pub fn aggregate(values: &[Option<f64>]) -> Aggregate {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let n = defined.len();
    let excluded = values.len() - n;
    if n == 0 {
        return Aggregate {
            mean: None,
            std: None,
            n,
            excluded,
        };
    }
    let mean = defined.iter().sum::<f64>() / n as f64;
    let var = defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Aggregate {
        mean: Some(mean),
        std: Some(var.sqrt()),
        n,
        excluded,
    }
}

/// Cross-validated metrics of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub parameter_count: usize,
    pub threshold: f64,
    /// Always `"population"`: the deviation divides by the fold count.
    pub std_kind: String,
    pub folds: Vec<FoldResult>,
    pub pod: Aggregate,
    pub far: Aggregate,
    pub csi: Aggregate,
    /// `None` for variants without a regression head.
    pub dbz_mse: Option<Aggregate>,
}

impl MetricsReport {
    pub fn from_folds(variant: Variant, parameter_count: usize, threshold: f64, folds: Vec<FoldResult>) -> Self {
        let pick = |f: fn(&FoldResult) -> Option<f64>| aggregate(&folds.iter().map(f).collect::<Vec<_>>());
        Self {
            variant,
            parameter_count,
            threshold,
            std_kind: "population".into(),
            pod: pick(|f| f.pod),
            far: pick(|f| f.far),
            csi: pick(|f| f.csi),
            dbz_mse: variant.has_regressor().then(|| pick(|f| f.dbz_mse)),
            folds,
        }
    }
}

/// One metric's per-fold values, in fold order.
pub fn fold_values(report: &MetricsReport, metric: &str) -> Result<Vec<Option<f64>>> {
    let get: fn(&FoldResult) -> Option<f64> = match metric {
        "pod" => |f| f.pod,
        "far" => |f| f.far,
        "csi" => |f| f.csi,
        "dbz_mse" => |f| f.dbz_mse,
        other => return config_err(format!("unknown metric '{other}'")),
    };
    Ok(report.folds.iter().map(get).collect())
}

/// Trains a fresh model per fold on the other folds and evaluates it on the
/// held-out fold at its raw class balance.
pub fn cross_validate(
    dataset: &Dataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    threshold: f64,
) -> Result<MetricsReport> {
    if dataset.folds() < 2 {
        return config_err("cross-validation needs at least 2 folds");
    }
    let mut folds = Vec::with_capacity(dataset.folds());
    let mut parameter_count = 0;
    for k in 0..dataset.folds() {
        let mut model = Model::new(model_config.clone())?;
        parameter_count = model.parameter_count();
        init_params(&mut model, train_config.seed);
        train(&mut model, dataset, k, train_config, None)?;
        let split = dataset.split(k)?;
        let eval = evaluate(&mut model, dataset, &dataset.fold_indices(k), &split.normalization, threshold)?;
        let result = FoldResult::from_evaluation(k, &eval);
        log::info!(
            "{} fold {k}: CSI {} POD {} FAR {}",
            model_config.variant,
            fmt_opt(result.csi),
            fmt_opt(result.pod),
            fmt_opt(result.far)
        );
        folds.push(result);
    }
    Ok(MetricsReport::from_folds(model_config.variant, parameter_count, threshold, folds))
}

/// Places the scores of `indices` that were sampled from frame `frame` of
/// sequence `sequence` back onto a `height x width` grid at their center
/// pixels. Pixels without a sample stay NaN.
pub fn stitch_scores(
    dataset: &Dataset,
    indices: &[usize],
    scores: &[f64],
    sequence: usize,
    frame: usize,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    if indices.len() != scores.len() {
        return Err(Error::Shape(format!("{} indices but {} scores", indices.len(), scores.len())));
    }
    let mut map = Tensor::full(&[height, width], f64::NAN);
    for (&i, &score) in indices.iter().zip(scores) {
        let e = &dataset.entries()[i];
        let [t, r, c] = e.center;
        if e.sequence != sequence || t != frame {
            continue;
        }
        if r >= height || c >= width {
            return Err(Error::Shape(format!("sample {i} at ({r}, {c}) is outside a {height}x{width} grid")));
        }
        map.data_mut()[r * width + c] = score;
    }
    Ok(map)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.4}"))
}

fn csv_text(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

/// Per-fold rows followed by `mean` and `std_population` rows.
pub fn report_csv(report: &MetricsReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fold", "samples", "positives", "tp", "fn", "fp", "tn", "pod", "far", "csi", "dbz_mse"])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for f in &report.folds {
        let c = &f.confusion;
        w.write_record([
            f.fold.to_string(),
            f.samples.to_string(),
            f.positives.to_string(),
            c.tp.to_string(),
            c.fn_.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            cell(f.pod),
            cell(f.far),
            cell(f.csi),
            cell(f.dbz_mse),
        ])?;
    }
    let mse = report.dbz_mse.unwrap_or(Aggregate {
        mean: None,
        std: None,
        n: 0,
        excluded: 0,
    });
    for (label, pick) in [
        ("mean", (|a: &Aggregate| a.mean) as fn(&Aggregate) -> Option<f64>),
        ("std_population", |a: &Aggregate| a.std),
    ] {
        let mut row = vec![label.to_string()];
        row.extend(std::iter::repeat_n(String::new(), 6));
        row.extend([&report.pod, &report.far, &report.csi, &mse].map(|a| cell(pick(a))));
        w.write_record(&row)?;
    }
    csv_text(w)
}

/// Ablation table: one row per variant with `mean ± std` cells. MSE is
/// `n/a` for variants without a regression head.
pub fn compare_csv(reports: &[MetricsReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "CSI", "POD", "FAR", "MSE", "params"])?;
    for r in reports {
        w.write_record([
            r.variant.name().to_string(),
            r.csi.display(),
            r.pod.display(),
            r.far.display(),
            r.dbz_mse.map_or_else(|| "n/a".into(), |a| a.display()),
            r.parameter_count.to_string(),
        ])?;
    }
    csv_text(w)
}
