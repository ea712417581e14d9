//! Min-max scaling to `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Scaling constants for one input variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return config_err(format!("normalization needs finite x_min < x_max, got [{min}, {max}]"));
        }
        Ok(Self { min, max })
    }

    /// Tight range of `values`; a constant input is widened by one unit so
    /// the range stays valid.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return config_err("cannot derive a normalization range from no values");
        }
        if hi <= lo {
            hi = lo + 1.0;
        }
        Self::new(lo, hi)
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        scale(x, self.min, self.max)
    }

    #[inline]
    pub fn invert(&self, y: f64) -> f64 {
        (y + 1.0) * (self.max - self.min) / 2.0 + self.min
    }
}

#[inline]
fn scale(x: f64, min: f64, max: f64) -> f64 {
    ((x - min) * 2.0 / (max - min) - 1.0).clamp(-1.0, 1.0)
}

/// `2 (x - x_min) / (x_max - x_min) - 1`, clamped to `[-1, 1]`.
pub fn normalize(x: f64, x_min: f64, x_max: f64) -> Result<f64> {
    Range::new(x_min, x_max).map(|r| r.apply(x))
}

/// Inverse of [`normalize`] for values inside `[-1, 1]`.
pub fn denormalize(y: f64, x_min: f64, x_max: f64) -> Result<f64> {
    Range::new(x_min, x_max).map(|r| r.invert(y))
}
