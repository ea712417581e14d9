use proptest::prelude::*;
use tsmt::metrics::*;
use tsmt::tensor::Tensor;

/// Pairwise win fraction of positives over negatives, ties counted half.
fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..20).prop_map(|k| f64::from(k) / 19.0), n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #[test]
    fn csi_is_bounded_by_pod_and_far(tp in 0u64..50, fn_ in 0u64..50, fp in 0u64..50, tn in 0u64..50) {
        prop_assume!(tp + fn_ + fp > 0);
        let s = skill_scores(&ConfusionMatrix { tp, fn_, fp, tn });
        let csi = s.csi.unwrap();
        if let Some(pod) = s.pod {
            prop_assert!(csi <= pod + 1e-15);
        }
        if let Some(far) = s.far {
            prop_assert!(csi <= 1.0 - far + 1e-15);
        }
    }

    #[test]
    fn rethresholding_is_monotone((scores, labels) in sample()) {
        let mut last: Option<(u64, u64)> = None;
        for k in 0..=100 {
            let th = k as f64 / 100.0;
            let cm = confusion(&scores, &labels, th).unwrap();
            let tp = scores.iter().zip(&labels).filter(|(s, l)| **s >= th && **l == 1).count() as u64;
            let fp = scores.iter().zip(&labels).filter(|(s, l)| **s >= th && **l == 0).count() as u64;
            prop_assert_eq!((cm.tp, cm.fp), (tp, fp));
            prop_assert_eq!(cm.total(), scores.len() as u64);
            let skill = skill_scores(&cm);
            prop_assert_eq!(skill.far, (tp + fp > 0).then(|| fp as f64 / (tp + fp) as f64));
            if let Some((tp0, fp0)) = last {
                prop_assert!(tp <= tp0 && fp <= fp0);
            }
            last = Some((tp, fp));
        }
    }

    #[test]
    fn roc_area_equals_pair_counting((scores, labels) in sample()) {
        let pos = labels.iter().filter(|&&l| l == 1).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let roc = roc_curve(&scores, &labels).unwrap();
        prop_assert!((roc.auc - pair_auc(&scores, &labels)).abs() < 1e-12);
        let (first, last) = (roc.points[0], *roc.points.last().unwrap());
        prop_assert_eq!((first.x, first.y), (0.0, 0.0));
        prop_assert_eq!((last.x, last.y), (1.0, 1.0));
        prop_assert!(roc.points.windows(2).all(|w| w[0].x <= w[1].x && w[0].y <= w[1].y));
        let pr = pr_curve(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&pr.auc));
    }

    #[test]
    fn scores_are_pure((scores, labels) in sample()) {
        let a = skill_scores(&confusion(&scores, &labels, 0.5).unwrap());
        let b = skill_scores(&confusion(&scores, &labels, 0.5).unwrap());
        prop_assert_eq!(a, b);
    }
}

#[test]
fn mse_matches_a_loop() {
    let a = Tensor::from_fn(&[3, 48, 48], |i| (i as f64 * 0.37).sin() * 40.0 + 30.0);
    let b = Tensor::from_fn(&[3, 48, 48], |i| (i as f64 * 0.11).cos() * 35.0 + 25.0);
    let mut sum = 0.0;
    for i in 0..a.numel() {
        sum += (a.data()[i] - b.data()[i]).powi(2);
    }
    assert!((dbz_mse(&a, &b).unwrap() - sum / a.numel() as f64).abs() < 1e-12);
}

#[test]
fn population_deviation_of_fold_values() {
    let a = aggregate(&[Some(0.2), Some(0.4), Some(0.4), Some(0.6)]);
    assert!((a.mean.unwrap() - 0.4).abs() < 1e-15);
    assert!((a.std.unwrap() - 0.141_421_356_237_309_5).abs() < 1e-12);
}

#[test]
fn stitched_map_puts_scores_at_sample_centers() {
    use tsmt::data::synth::{CellSource, RandomCells};
    use tsmt::data::{build_dataset, synth_days, SamplingConfig, SyntheticStormConfig};
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
    let ds = build_dataset(synth_days(&config, 4).unwrap(), &sampling).unwrap();
    let indices = ds.fold_indices(1);
    let scores: Vec<f64> = indices.iter().map(|&i| i as f64).collect();
    let frame = ds.entries()[indices[0]].center[0];
    let map = stitch_scores(&ds, &indices, &scores, 1, frame, 64, 64).unwrap();
    let mut placed = 0;
    for &i in &indices {
        let [t, r, c] = ds.entries()[i].center;
        if t == frame {
            assert_eq!(map.data()[r * 64 + c], i as f64);
            placed += 1;
        }
    }
    assert!(placed > 0);
    assert_eq!(map.data().iter().filter(|v| !v.is_nan()).count(), placed);
    assert!(stitch_scores(&ds, &indices, &scores[1..], 1, frame, 64, 64).is_err());
}
