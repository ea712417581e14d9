//! Ablation over the five network variants with four-fold cross-validation.
//! Each fold trains a fresh model; the iteration count is kept small so the
//! whole table finishes in minutes.
//!
//! ```text
//! cargo run --release --example compare_variants -- 100
//! ```

use tsmt::data::{build_dataset, synth_days, SamplingConfig, SyntheticStormConfig, DEFAULT_DAYS};
use tsmt::metrics::{compare_csv, cross_validate};
use tsmt::model::{ModelConfig, Variant};
use tsmt::train::TrainConfig;

fn main() -> tsmt::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let dataset = build_dataset(synth_days(&SyntheticStormConfig::default(), DEFAULT_DAYS)?, &SamplingConfig::default())?;
    let train = TrainConfig {
        iterations,
        ..Default::default()
    };
    let mut reports = Vec::new();
    for variant in Variant::ALL {
        let report = cross_validate(&dataset, &ModelConfig::new(variant), &train, 0.5)?;
        println!("{variant}: CSI {}", report.csi.display());
        reports.push(report);
    }
    print!("{}", compare_csv(&reports)?);
    Ok(())
}
