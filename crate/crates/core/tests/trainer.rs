use tsmt::data::synth::{CellSource, RandomCells};
use tsmt::data::*;
use tsmt::model::{Init, Model, ModelConfig, Variant};
use tsmt::train::*;
use tsmt::Error;

fn small_dataset() -> Dataset {
    let config = SyntheticStormConfig {
        height: 64,
        width: 64,
        frames: 12,
        cells: CellSource::Random(RandomCells {
            count: 4,
            amplitude: [40.0, 55.0],
            sigma: [5.0, 9.0],
            margin: 20.0,
            ..RandomCells::default()
        }),
        ..SyntheticStormConfig::default()
    };
    let sampling = SamplingConfig {
        stride: 4,
        ..SamplingConfig::default()
    };
    build_dataset(synth_days(&config, 4).unwrap(), &sampling).unwrap()
}

fn fresh(config: ModelConfig, seed: u64) -> Model {
    let mut m = Model::new(config).unwrap();
    init_params(&mut m, seed);
    m
}

fn short(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

fn trainable(m: &Model) -> Vec<(String, Vec<f64>)> {
    let s = m.store();
    s.trainable_ids().map(|id| (s.name(id).to_string(), s.value(id).data().to_vec())).collect()
}

#[test]
fn zero_regression_weight_trains_the_classifier_alone() {
    let ds = small_dataset();
    let config = ModelConfig {
        beta: 0.0,
        ..ModelConfig::new(Variant::Tsmt)
    };
    let mut m = fresh(config, 1);
    let before = trainable(&m);
    let history = train(&mut m, &ds, 0, &short(3), None).unwrap();
    for r in &history {
        assert_eq!(r.regression, None);
        assert_eq!(Some(r.total), r.classification);
    }
    for ((name, a), (_, b)) in before.iter().zip(trainable(&m)) {
        assert_eq!(name.starts_with("regressor"), *a == b, "{name}");
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let ds = small_dataset();
    let mut m = fresh(ModelConfig::new(Variant::Tsmt), 2);
    let before = trainable(&m);
    let config = TrainConfig {
        learning_rate: 0.0,
        ..short(4)
    };
    train(&mut m, &ds, 1, &config, None).unwrap();
    assert_eq!(before, trainable(&m));
}

#[test]
fn runs_are_reproducible() {
    let ds = small_dataset();
    let run = || {
        let mut m = fresh(ModelConfig::new(Variant::Tsmt), 3);
        let h = train(&mut m, &ds, 2, &short(3), None).unwrap();
        (h, trainable(&m))
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.0.iter().all(|r| r.total.is_finite()));
    let text = loss_csv(Variant::Tsmt, &a.0).unwrap();
    assert_eq!(text.lines().next().unwrap(), "iteration,L_c,L_r,L_all");
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn checkpoints_reload_bit_exactly() {
    let ds = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    let mut m = fresh(ModelConfig::new(Variant::Tsmt), 4);
    train(&mut m, &ds, 0, &short(2), Some(dir.path())).unwrap();
    let (mut loaded, meta) = load_checkpoint(dir.path()).unwrap();
    assert_eq!((meta.iterations, meta.held_out), (2, 0));
    assert_eq!(meta.parameter_count, m.parameter_count());
    let split = ds.split(0).unwrap();
    let batch = ds.batch(&ds.fold_indices(0)[..5], &split.normalization).unwrap();
    let a = m.predict(&batch, &split.normalization.radar).unwrap();
    let b = loaded.predict(&batch, &split.normalization.radar).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_iterations_leave_the_initialization() {
    let ds = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    let mut m = fresh(ModelConfig::new(Variant::SingleCls), 5);
    let init = trainable(&m);
    let history = train(&mut m, &ds, 0, &short(0), Some(dir.path())).unwrap();
    assert!(history.is_empty());
    let (loaded, _) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(trainable(&loaded), init);
}

#[test]
fn initial_weights_have_the_target_spread() {
    let m = fresh(ModelConfig::new(Variant::Tsmt), 6);
    let a = fresh(ModelConfig::new(Variant::Tsmt), 6);
    assert_eq!(trainable(&m), trainable(&a));
    let mut checked = 0;
    for &(id, init) in m.init_rules() {
        let v = m.store().value(id).data();
        match init {
            Init::Zeros => assert!(v.iter().all(|&x| x == 0.0)),
            Init::Ones => assert!(v.iter().all(|&x| x == 1.0)),
            Init::HeNormal { fan_in } if v.len() >= 10_000 => {
                let target = (2.0 / fan_in as f64).sqrt();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
                assert!((std / target - 1.0).abs() < 0.1, "{}: {std} vs {target}", m.store().name(id));
                checked += 1;
            }
            Init::HeNormal { .. } => {}
        }
    }
    assert!(checked >= 3);
    for id in m.store().ids() {
        if m.store().name(id).ends_with(".bias") {
            assert!(m.store().value(id).data().iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn non_finite_loss_stops_training() {
    let ds = small_dataset();
    let mut m = fresh(ModelConfig::new(Variant::Tsmt), 7);
    let id = m.store().find("regressor.deconv_out.bias").unwrap();
    m.store_mut().value_mut(id).data_mut()[0] = f64::NAN;
    match train(&mut m, &ds, 0, &short(3), None) {
        Err(Error::NonFiniteLoss { iteration, .. }) => assert_eq!(iteration, 1),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn loss_falls_over_five_hundred_iterations() {
    let ds = build_dataset(synth_days(&SyntheticStormConfig::default(), 4).unwrap(), &SamplingConfig::default()).unwrap();
    let mut m = fresh(ModelConfig::new(Variant::Tsmt), 0);
    let config = TrainConfig {
        iterations: 500,
        ..TrainConfig::default()
    };
    let history = train(&mut m, &ds, 0, &config, None).unwrap();
    assert!(history.iter().all(|r| r.total.is_finite()));
    let mean = |r: &[LossRecord]| r.iter().map(|x| x.total).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(&history[..50]), mean(&history[450..]));
    assert!(last < first, "smoothed loss {first} -> {last}");
}
