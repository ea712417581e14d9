//! Pixel-wise sampling: labels, day-wise folds, rebalancing and normalization.

use tsmt::data::{build_dataset, synth_days, BalanceMode, LabelRule, SamplingConfig, SyntheticStormConfig};

fn main() -> tsmt::Result<()> {
    let sequences = synth_days(&SyntheticStormConfig::default(), 4)?;
    for (mode, rule) in [
        (BalanceMode::Oversample, LabelRule::AnyFrame),
        (BalanceMode::Undersample, LabelRule::AnyFrame),
        (BalanceMode::Oversample, LabelRule::Sustained),
    ] {
        let sampling = SamplingConfig {
            balance_mode: mode,
            label_rule: rule,
            ..Default::default()
        };
        let dataset = build_dataset(sequences.clone(), &sampling)?;
        let h = dataset.header();
        println!(
            "{mode} / {rule}: {} samples, {:.3} positive, skipped {} (history) {} (horizon) {} (bounds)",
            h.samples, h.positive_fraction, h.skipped.history, h.skipped.horizon, h.skipped.bounds
        );
        for split in &h.splits {
            println!(
                "  hold out fold {}: train {} -> {} samples at {:.3} positive; test {} at {:.3}",
                split.held_out,
                split.train_raw.total(),
                split.train_balanced.total(),
                split.train_balanced.positive_fraction,
                split.test.total(),
                split.test.positive_fraction,
            );
        }
    }

    let dataset = build_dataset(sequences, &SamplingConfig::default())?;
    let split = dataset.split(0)?;
    let batch = dataset.batch(&split.train_samples[..4], &split.normalization)?;
    let (lo, hi) = batch
        .radar
        .data()
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!(
        "batch radar {:?} satellite {:?} targets {:?}, normalized radar in [{lo:.3}, {hi:.3}]",
        batch.radar.shape(),
        batch.satellite.shape(),
        batch.reg_labels.shape()
    );
    Ok(())
}
