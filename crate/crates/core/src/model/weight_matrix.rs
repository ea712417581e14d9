//! The center-peaked weighting field of the regression loss.

use serde::{Deserialize, Serialize};

use crate::data::REGRESSION_PATCH;
use crate::error::{Error, Result};

const N: usize = REGRESSION_PATCH;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Distance-to-edge pyramid, 1 on the border rising to 24 in the center.
    #[default]
    Pyramid,
    /// The same pyramid capped at 2.
    Cap2,
}

impl std::fmt::Display for WeightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pyramid => "pyramid",
            Self::Cap2 => "cap2",
        })
    }
}

impl std::str::FromStr for WeightMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pyramid" => Ok(Self::Pyramid),
            "cap2" => Ok(Self::Cap2),
            other => Err(Error::Config(format!("unknown weight-matrix mode '{other}' (expected pyramid or cap2)"))),
        }
    }
}

/// Unnormalized weight of cell `(i, j)`, 0-based.
pub fn raw_weight(i: usize, j: usize, mode: WeightMode) -> f64 {
    let m = (i + 1).min(j + 1).min(N - i).min(N - j) as f64;
    match mode {
        WeightMode::Pyramid => m,
        WeightMode::Cap2 => m.min(2.0),
    }
}

/// 48x48 softmax-normalized weights, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(mode: WeightMode) -> Self {
        let raw: Vec<f64> = (0..N * N).map(|k| raw_weight(k / N, k % N, mode)).collect();
        let peak = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = raw.iter().map(|&v| (v - peak).exp()).collect();
        let z: f64 = exp.iter().sum();
        Self {
            values: exp.into_iter().map(|e| e / z).collect(),
        }
    }

    pub fn side(&self) -> usize {
        N
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * N + j]
    }
}

pub fn build_weight_matrix(mode: WeightMode) -> WeightMatrix {
    WeightMatrix::new(mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_values() {
        assert_eq!(raw_weight(0, 0, WeightMode::Pyramid), 1.0);
        assert_eq!(raw_weight(23, 23, WeightMode::Pyramid), 24.0);
        assert_eq!(raw_weight(24, 24, WeightMode::Pyramid), 24.0);
        assert_eq!(raw_weight(47, 10, WeightMode::Pyramid), 1.0);
        assert_eq!(raw_weight(23, 23, WeightMode::Cap2), 2.0);
    }

    #[test]
    fn normalized_and_peaked() {
        for mode in [WeightMode::Pyramid, WeightMode::Cap2] {
            let wm = WeightMatrix::new(mode);
            let sum: f64 = wm.values().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(wm.values().iter().all(|&v| v > 0.0));
        }
        let wm = WeightMatrix::new(WeightMode::Pyramid);
        let ratio = wm.get(0, 0) / wm.get(23, 23);
        assert!((ratio / (-23f64).exp() - 1.0).abs() < 1e-9);
    }
}
