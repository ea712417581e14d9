//! The `tsmt` command line: synth, prepare, train, eval, compare, curves.
//!
//! Every setting can come from a flag, from a flat `key=value` config file
//! passed with `--config` (keys are the long flag names), or from the
//! built-in default, in that order of precedence. Each run writes the
//! resolved settings to `config.txt` in its output directory; that file can
//! be fed back with `--config` to repeat the run.

mod settings;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use settings::Settings;

use crate::data::synth::{CellSource, SyntheticStormConfig, DEFAULT_DAYS};
use crate::data::{build_dataset, load_sequences_in, save_sequence, synth_days, Dataset, SamplingConfig};
use crate::error::{config_err, Error, Result};
use crate::fsutil::write_atomic;
use crate::metrics::{
    compare_csv, cross_validate, curve_csv, evaluate, pr_curve, report_csv, roc_curve, Evaluation, FoldResult,
    MetricsReport,
};
use crate::model::{Model, ModelConfig, Variant};
use crate::train::{init_params, load_checkpoint, train, write_loss_csv, TrainConfig};

/// Name of the resolved-settings snapshot written next to every output.
pub const SNAPSHOT_FILE: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "tsmt", version, about = "Two-stream multi-task storm nowcasting")]
pub struct Cli {
    /// Flat key=value settings file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic radar and satellite sequences.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        /// Number of synthetic days (one sequence each).
        #[arg(long)]
        days: Option<usize>,
    },
    /// Sample sequences into a manifest and per-sample files.
    Prepare {
        /// Directory of sequence sidecars written by `synth`.
        sequences: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Train one variant on all folds but the held-out one.
    Train {
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Held-out fold.
        #[arg(long)]
        fold: Option<usize>,
        /// Write an intermediate checkpoint every this many iterations.
        #[arg(long)]
        checkpoint_interval: Option<usize>,
    },
    /// Score a checkpoint on a fold.
    Eval {
        checkpoint: PathBuf,
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Fold to score; defaults to the checkpoint's held-out fold.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Ablation table: cross-validate variants, or tabulate given checkpoints.
    Compare {
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        threshold: Option<f64>,
        /// Comma-separated variants to cross-validate (default: all five).
        #[arg(long)]
        variants: Option<String>,
        /// Evaluate these checkpoints on their held-out folds instead of training.
        #[arg(long, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
    },
    /// ROC and precision-recall points of a checkpoint on a fold.
    Curves {
        checkpoint: PathBuf,
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        fold: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Target positive fraction of rebalanced training splits.
    #[arg(long)]
    pub positive_fraction: Option<f64>,
    /// oversample or undersample
    #[arg(long)]
    pub balance_mode: Option<String>,
    /// any-frame or sustained
    #[arg(long)]
    pub label_rule: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Single_cls, Single_reg, TwoStream_cls, TwoStream_reg or TSMT
    #[arg(long)]
    pub variant: Option<String>,
    /// Classification loss weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Regression loss weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// pyramid or cap2
    #[arg(long)]
    pub wm_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

/// Logging to stderr at the level named by `TSMT_LOG_LEVEL` (default info).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("TSMT_LOG_LEVEL", "info");
    let _ = env_logger::Builder::from_env(env).try_init();
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut s = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    match cli.command {
        Command::Synth { run, days } => cmd_synth(&mut s, &run, days),
        Command::Prepare { sequences, run, sampling } => cmd_prepare(&mut s, &sequences, &run, &sampling),
        Command::Train {
            manifest,
            run,
            model,
            train,
            fold,
            checkpoint_interval,
        } => cmd_train(&mut s, &manifest, &run, &model, &train, fold, checkpoint_interval),
        Command::Eval {
            checkpoint,
            manifest,
            run,
            fold,
            threshold,
        } => cmd_eval(&mut s, &checkpoint, &manifest, &run, fold, threshold),
        Command::Compare {
            manifest,
            run,
            model,
            train,
            threshold,
            variants,
            checkpoints,
        } => cmd_compare(&mut s, &manifest, &run, &model, &train, threshold, variants, &checkpoints),
        Command::Curves {
            checkpoint,
            manifest,
            run,
            fold,
        } => cmd_curves(&mut s, &checkpoint, &manifest, &run, fold),
    }
}

fn out_dir(s: &mut Settings, run: &RunArgs, default: &str) -> Result<PathBuf> {
    let out: String = s.resolve("out", run.out.as_ref().map(|p| p.display().to_string()), default.to_string())?;
    Ok(PathBuf::from(out))
}

fn seed(s: &mut Settings, run: &RunArgs) -> Result<u64> {
    s.resolve("seed", run.seed, 0)
}

fn finish(s: &Settings, out: &Path) -> Result<()> {
    s.warn_unused();
    write_atomic(&out.join(SNAPSHOT_FILE), s.snapshot().as_bytes())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn cmd_synth(s: &mut Settings, run: &RunArgs, days: Option<usize>) -> Result<()> {
    let seed = seed(s, run)?;
    let out = out_dir(s, run, "sequences")?;
    let days: usize = s.resolve("days", days, DEFAULT_DAYS)?;
    if days == 0 {
        return config_err("--days must be at least 1");
    }
    let config = SyntheticStormConfig {
        seed,
        ..Default::default()
    };
    let sequences = synth_days(&config, days)?;
    for (d, seq) in sequences.iter().enumerate() {
        save_sequence(&out, &format!("day{d:03}"), seq)?;
    }
    let CellSource::Random(cells) = &config.cells else {
        unreachable!("default config draws random cells")
    };
    println!(
        "wrote {days} sequences of {} frames on a {}x{} grid ({} cells per day) to {}",
        config.frames,
        config.height,
        config.width,
        cells.count,
        out.display()
    );
    write_json(&out.join("synth_config.json"), &config)?;
    finish(s, &out)
}

fn parse<T: std::str::FromStr<Err = Error>>(v: Option<&String>) -> Result<Option<T>> {
    v.map(|s| s.parse()).transpose()
}

pub fn cmd_prepare(s: &mut Settings, sequences: &Path, run: &RunArgs, a: &SamplingArgs) -> Result<()> {
    let d = SamplingConfig::default();
    let sampling = SamplingConfig {
        seed: seed(s, run)?,
        stride: s.resolve("stride", a.stride, d.stride)?,
        folds: s.resolve("folds", a.folds, d.folds)?,
        positive_fraction: s.resolve("positive-fraction", a.positive_fraction, d.positive_fraction)?,
        balance_mode: s.resolve("balance-mode", parse(a.balance_mode.as_ref())?, d.balance_mode)?,
        label_rule: s.resolve("label-rule", parse(a.label_rule.as_ref())?, d.label_rule)?,
    };
    let out = out_dir(s, run, "dataset")?;
    let seqs = load_sequences_in(sequences)?;
    if seqs.is_empty() {
        return Err(Error::Data(format!("no sequences found in {}", sequences.display())));
    }
    let dataset = build_dataset(seqs, &sampling)?;
    let manifest = dataset.write(&out)?;
    print_dataset_stats(&dataset);
    println!("manifest: {}", manifest.display());
    finish(s, &out)
}

/// Sample counts and raw versus rebalanced positive fractions per fold.
pub fn print_dataset_stats(dataset: &Dataset) {
    let h = dataset.header();
    println!(
        "{} samples from {} sequences, positive fraction {:.4}; skipped: {} history, {} horizon, {} bounds",
        h.samples, h.sequences, h.positive_fraction, h.skipped.history, h.skipped.horizon, h.skipped.bounds
    );
    println!("fold  samples  positives  test_pos_frac  train_raw_frac  train_balanced_frac  train_balanced_n");
    for (k, split) in h.splits.iter().enumerate() {
        let c = &h.fold_counts[k];
        println!(
            "{k:>4}  {:>7}  {:>9}  {:>13.4}  {:>14.4}  {:>19.4}  {:>16}",
            c.total(),
            c.positives,
            split.test.positive_fraction,
            split.train_raw.positive_fraction,
            split.train_balanced.positive_fraction,
            split.train_samples.len()
        );
    }
}

fn model_config(s: &mut Settings, a: &ModelArgs, variant: Variant) -> Result<ModelConfig> {
    let d = ModelConfig::new(variant);
    let config = ModelConfig {
        alpha: s.resolve("alpha", a.alpha, d.alpha)?,
        beta: s.resolve("beta", a.beta, d.beta)?,
        wm_mode: s.resolve("wm-mode", parse(a.wm_mode.as_ref())?, d.wm_mode)?,
        ..d
    };
    config.validate()?;
    Ok(config)
}

fn train_config(s: &mut Settings, a: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: s.resolve("lr", a.lr, d.learning_rate)?,
        batch_size: s.resolve("batch-size", a.batch_size, d.batch_size)?,
        iterations: s.resolve("iterations", a.iterations, d.iterations)?,
        seed,
        ..d
    };
    config.validate()?;
    Ok(config)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    s: &mut Settings,
    manifest: &Path,
    run: &RunArgs,
    m: &ModelArgs,
    t: &TrainArgs,
    fold: Option<usize>,
    checkpoint_interval: Option<usize>,
) -> Result<()> {
    let seed = seed(s, run)?;
    let variant: Variant = s.resolve("variant", parse(m.variant.as_ref())?, Variant::Tsmt)?;
    let model_config = model_config(s, m, variant)?;
    let mut train_config = train_config(s, t, seed)?;
    train_config.checkpoint_interval = s.resolve("checkpoint-interval", checkpoint_interval, 0)?;
    let fold: usize = s.resolve("fold", fold, 0)?;
    let out = out_dir(s, run, "run")?;
    let dataset = Dataset::open(manifest)?;
    dataset.split(fold)?;
    let mut model = Model::new(model_config)?;
    init_params(&mut model, seed);
    log::info!(
        "training {variant} ({} parameters) for {} iterations, fold {fold} held out",
        model.parameter_count(),
        train_config.iterations
    );
    let checkpoint = out.join("checkpoint");
    let history = train(&mut model, &dataset, fold, &train_config, Some(&checkpoint))?;
    write_loss_csv(&out.join("loss.csv"), variant, &history)?;
    println!(
        "checkpoint: {}; loss history: {}",
        checkpoint.display(),
        out.join("loss.csv").display()
    );
    finish(s, &out)
}

/// Loads a checkpoint and scores it on `fold` (default: its held-out fold).
fn evaluate_checkpoint(
    checkpoint: &Path,
    dataset: &Dataset,
    fold: Option<usize>,
    threshold: f64,
) -> Result<(Model, usize, Evaluation)> {
    let (mut model, meta) = load_checkpoint(checkpoint)?;
    let fold = fold.unwrap_or(meta.held_out);
    let indices = dataset.fold_indices(fold);
    if indices.is_empty() {
        return Err(Error::Data(format!("fold {fold} has no samples")));
    }
    let eval = evaluate(&mut model, dataset, &indices, &meta.normalization, threshold)?;
    Ok((model, fold, eval))
}

fn scores_csv(dataset: &Dataset, fold: usize, eval: &Evaluation) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample", "sequence", "t", "row", "col", "label", "score"])?;
    for (&i, (&score, &label)) in dataset.fold_indices(fold).iter().zip(eval.scores.iter().zip(&eval.labels)) {
        let e = &dataset.entries()[i];
        w.write_record([
            i.to_string(),
            e.sequence.to_string(),
            e.center[0].to_string(),
            e.center[1].to_string(),
            e.center[2].to_string(),
            label.to_string(),
            score.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub fn cmd_eval(
    s: &mut Settings,
    checkpoint: &Path,
    manifest: &Path,
    run: &RunArgs,
    fold: Option<usize>,
    threshold: Option<f64>,
) -> Result<()> {
    let threshold = s.resolve("threshold", threshold, 0.5)?;
    let fold = s.resolve_opt("fold", fold)?;
    let out = out_dir(s, run, "eval")?;
    let dataset = Dataset::open(manifest)?;
    let (model, fold, eval) = evaluate_checkpoint(checkpoint, &dataset, fold, threshold)?;
    let report = MetricsReport::from_folds(
        model.variant(),
        model.parameter_count(),
        threshold,
        vec![FoldResult::from_evaluation(fold, &eval)],
    );
    write_json(&out.join("report.json"), &report)?;
    write_atomic(&out.join("report.csv"), report_csv(&report)?.as_bytes())?;
    write_atomic(&out.join("scores.csv"), scores_csv(&dataset, fold, &eval)?.as_bytes())?;
    println!(
        "{} on fold {fold}: CSI {} POD {} FAR {} dBZ-MSE {}",
        report.variant,
        report.csi.display(),
        report.pod.display(),
        report.far.display(),
        report.dbz_mse.map_or_else(|| "n/a".into(), |a| a.display())
    );
    finish(s, &out)
}

fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    list.split(',').map(|v| v.trim().parse()).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_compare(
    s: &mut Settings,
    manifest: &Path,
    run: &RunArgs,
    m: &ModelArgs,
    t: &TrainArgs,
    threshold: Option<f64>,
    variants: Option<String>,
    checkpoints: &[PathBuf],
) -> Result<()> {
    let seed = seed(s, run)?;
    let threshold = s.resolve("threshold", threshold, 0.5)?;
    let out = out_dir(s, run, "compare")?;
    let dataset = Dataset::open(manifest)?;
    let mut reports = Vec::new();
    if checkpoints.is_empty() {
        let all = Variant::ALL.map(|v| v.name()).join(",");
        let list: String = s.resolve("variants", variants, all)?;
        let train_config = train_config(s, t, seed)?;
        for variant in parse_variants(&list)? {
            let config = model_config(s, m, variant)?;
            log::info!("cross-validating {variant} over {} folds", dataset.folds());
            reports.push(cross_validate(&dataset, &config, &train_config, threshold)?);
        }
    } else {
        for dir in checkpoints {
            let (model, fold, eval) = evaluate_checkpoint(dir, &dataset, None, threshold)?;
            reports.push(MetricsReport::from_folds(
                model.variant(),
                model.parameter_count(),
                threshold,
                vec![FoldResult::from_evaluation(fold, &eval)],
            ));
        }
    }
    for r in &reports {
        write_json(&out.join(format!("report_{}.json", r.variant.name())), r)?;
    }
    write_json(&out.join("compare.json"), &reports)?;
    let table = compare_csv(&reports)?;
    write_atomic(&out.join("compare.csv"), table.as_bytes())?;
    print!("{table}");
    finish(s, &out)
}

pub fn cmd_curves(s: &mut Settings, checkpoint: &Path, manifest: &Path, run: &RunArgs, fold: Option<usize>) -> Result<()> {
    let fold = s.resolve_opt("fold", fold)?;
    let out = out_dir(s, run, "curves")?;
    let dataset = Dataset::open(manifest)?;
    let (_, fold, eval) = evaluate_checkpoint(checkpoint, &dataset, fold, 0.5)?;
    let roc = roc_curve(&eval.scores, &eval.labels)?;
    let pr = pr_curve(&eval.scores, &eval.labels)?;
    write_atomic(&out.join("roc.csv"), curve_csv(&roc, "fpr", "tpr")?.as_bytes())?;
    write_atomic(&out.join("pr.csv"), curve_csv(&pr, "recall", "precision")?.as_bytes())?;
    write_json(
        &out.join("auc.json"),
        &serde_json::json!({ "fold": fold, "roc_auc": roc.auc, "pr_auc": pr.auc }),
    )?;
    println!("fold {fold}: ROC-AUC {:.4}, PR-AUC {:.4}", roc.auc, pr.auc);
    finish(s, &out)
}
