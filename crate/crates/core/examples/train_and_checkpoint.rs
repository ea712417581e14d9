//! Trains the multi-task network for a short run, writes the loss history and
//! a checkpoint, and reloads it.
//!
//! ```text
//! cargo run --release --example train_and_checkpoint -- 200
//! ```

use tsmt::data::{build_dataset, synth_days, SamplingConfig, SyntheticStormConfig};
use tsmt::model::{Model, ModelConfig, Variant};
use tsmt::train::{init_params, load_checkpoint, train, write_loss_csv, TrainConfig};

fn main() -> tsmt::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let dataset = build_dataset(synth_days(&SyntheticStormConfig::default(), 4)?, &SamplingConfig::default())?;

    let mut model = Model::new(ModelConfig::new(Variant::Tsmt))?;
    init_params(&mut model, 0);
    println!("{} with {} parameters", model.variant(), model.parameter_count());

    let out = std::env::temp_dir().join("tsmt-train-example");
    let config = TrainConfig {
        iterations,
        ..Default::default()
    };
    let history = train(&mut model, &dataset, 0, &config, Some(&out.join("checkpoint")))?;
    for r in history.iter().step_by((iterations / 10).max(1)) {
        println!(
            "iter {:>5}  cls {:.4}  reg {:.5}  total {:.4}",
            r.iteration,
            r.classification.unwrap_or(f64::NAN),
            r.regression.unwrap_or(f64::NAN),
            r.total
        );
    }
    write_loss_csv(&out.join("loss.csv"), model.variant(), &history)?;

    let (reloaded, meta) = load_checkpoint(&out.join("checkpoint"))?;
    let same = model.store().ids().all(|id| model.store().value(id) == reloaded.store().value(id));
    println!(
        "checkpoint after {} iterations (held-out fold {}) reloads exactly: {same}",
        meta.iterations, meta.held_out
    );
    println!("outputs in {}", out.display());
    Ok(())
}
