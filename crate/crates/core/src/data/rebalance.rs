//! Class rebalancing of training samples by duplicating positives or
//! dropping negatives.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceMode {
    #[default]
    Oversample,
    Undersample,
}

impl std::fmt::Display for BalanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Oversample => "oversample",
            Self::Undersample => "undersample",
        })
    }
}

impl std::str::FromStr for BalanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oversample" => Ok(Self::Oversample),
            "undersample" => Ok(Self::Undersample),
            other => config_err(format!(
                "unknown balance mode '{other}' (expected oversample or undersample)"
            )),
        }
    }
}

/// Indices into `labels` (with repetition when oversampling) whose positive
/// fraction is as close to `target` as whole counts allow.
///
/// Oversampling adds duplicated positives when positives are scarce and
/// duplicated negatives when they are plentiful; undersampling drops
/// negatives or positives respectively. The result is sorted, so it is a
/// multiset rather than an ordering.
pub fn rebalance(labels: &[u8], target: f64, mode: BalanceMode, seed: u64) -> Result<Vec<usize>> {
    if !(target > 0.0 && target < 1.0) {
        return config_err(format!("target positive fraction must lie in (0, 1), got {target}"));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Data(format!(
            "cannot rebalance a training set with {} positives and {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    let (p, n) = (positives.len() as f64, negatives.len() as f64);
    // desired count of each class if the other stays fixed
    let want_pos = (target * n / (1.0 - target)).round() as usize;
    let want_neg = (p * (1.0 - target) / target).round() as usize;
    let scarce_positives = p / (p + n) < target;

    let mut rng = substream(seed, "rebalance", 0);
    let mut out = Vec::with_capacity(labels.len());
    match (mode, scarce_positives) {
        (BalanceMode::Oversample, true) => {
            out.extend(&negatives);
            out.extend(&positives);
            let extra = want_pos.saturating_sub(positives.len());
            out.extend((0..extra).map(|_| positives[rng.random_range(0..positives.len())]));
        }
        (BalanceMode::Oversample, false) => {
            out.extend(&negatives);
            out.extend(&positives);
            let extra = want_neg.saturating_sub(negatives.len());
            out.extend((0..extra).map(|_| negatives[rng.random_range(0..negatives.len())]));
        }
        (BalanceMode::Undersample, true) => {
            out.extend(&positives);
            let keep = want_neg.clamp(1, negatives.len());
            out.extend(sample(&mut rng, negatives.len(), keep).into_iter().map(|i| negatives[i]));
        }
        (BalanceMode::Undersample, false) => {
            out.extend(&negatives);
            let keep = want_pos.clamp(1, positives.len());
            out.extend(sample(&mut rng, positives.len(), keep).into_iter().map(|i| positives[i]));
        }
    }
    out.sort_unstable();
    Ok(out)
}
