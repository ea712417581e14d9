//! Scores a briefly trained model on its held-out day: contingency table,
//! POD / FAR / CSI and the reflectivity error of the regression head.

use tsmt::data::{build_dataset, synth_days, SamplingConfig, SyntheticStormConfig, DEFAULT_DAYS};
use tsmt::metrics::{evaluate, FoldResult, MetricsReport};
use tsmt::model::{Model, ModelConfig, Variant};
use tsmt::train::{init_params, train, TrainConfig};

fn main() -> tsmt::Result<()> {
    let dataset = build_dataset(synth_days(&SyntheticStormConfig::default(), DEFAULT_DAYS)?, &SamplingConfig::default())?;
    let held_out = 1;
    let mut model = Model::new(ModelConfig::new(Variant::Tsmt))?;
    init_params(&mut model, 3);
    let config = TrainConfig {
        iterations: 80,
        seed: 3,
        ..Default::default()
    };
    train(&mut model, &dataset, held_out, &config, None)?;

    let split = dataset.split(held_out)?;
    let indices = dataset.fold_indices(held_out);
    for threshold in [0.3, 0.5, 0.7] {
        let eval = evaluate(&mut model, &dataset, &indices, &split.normalization, threshold)?;
        let c = eval.confusion;
        println!(
            "threshold {threshold}: tp {} fn {} fp {} tn {} | POD {:?} FAR {:?} CSI {:?} | dBZ-MSE {:?}",
            c.tp, c.fn_, c.fp, c.tn, eval.pod, eval.far, eval.csi, eval.dbz_mse
        );
    }

    let eval = evaluate(&mut model, &dataset, &indices, &split.normalization, 0.5)?;
    let report = MetricsReport::from_folds(
        model.variant(),
        model.parameter_count(),
        0.5,
        vec![FoldResult::from_evaluation(held_out, &eval)],
    );
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
