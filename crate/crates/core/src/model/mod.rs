//! The two-stream multi-task network, its ablation variants and losses.
//!
//! The radar stream turns a `[1, 5, 54, 54]` reflectivity history into a
//! `[32, 6, 6]` feature map with two 3D convolution blocks that consume the
//! time axis (5 -> 3 -> 1) and a 2D block. The satellite stream first
//! convolves each of the 13 channels over time on its own (a grouped 3D
//! convolution), then mixes channels with a pointwise convolution. Both maps
//! are concatenated and fused by one convolution. A pooled, fully connected
//! head gives storm probabilities; a transposed-convolution head predicts
//! the 48x48 reflectivity field 30 minutes ahead.

mod network;
mod weight_matrix;

pub use network::{Heads, Init, LossVars, Model, Outputs, Prediction};
pub use weight_matrix::{build_weight_matrix, raw_weight, WeightMatrix, WeightMode};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Network variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Radar stream and classification head.
    #[serde(rename = "Single_cls")]
    SingleCls,
    /// Radar stream and regression head.
    #[serde(rename = "Single_reg")]
    SingleReg,
    /// Both streams, fusion, classification head.
    #[serde(rename = "TwoStream_cls")]
    TwoStreamCls,
    /// Both streams, fusion, regression head.
    #[serde(rename = "TwoStream_reg")]
    TwoStreamReg,
    /// Both streams, fusion and both heads.
    #[serde(rename = "TSMT")]
    Tsmt,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SingleCls,
        Variant::SingleReg,
        Variant::TwoStreamCls,
        Variant::TwoStreamReg,
        Variant::Tsmt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SingleCls => "Single_cls",
            Variant::SingleReg => "Single_reg",
            Variant::TwoStreamCls => "TwoStream_cls",
            Variant::TwoStreamReg => "TwoStream_reg",
            Variant::Tsmt => "TSMT",
        }
    }

    pub fn uses_satellite(self) -> bool {
        !matches!(self, Variant::SingleCls | Variant::SingleReg)
    }

    pub fn has_classifier(self) -> bool {
        matches!(self, Variant::SingleCls | Variant::TwoStreamCls | Variant::Tsmt)
    }

    pub fn has_regressor(self) -> bool {
        matches!(self, Variant::SingleReg | Variant::TwoStreamReg | Variant::Tsmt)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("TS-MTCN") && *v == Variant::Tsmt))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant '{s}' (expected one of Single_cls, Single_reg, TwoStream_cls, TwoStream_reg, TSMT)"
                ))
            })
    }
}

/// Channel widths of every block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    /// Output channels of the two radar 3D blocks; the 2D block keeps the second width.
    pub radar: [usize; 2],
    /// Temporal filters per satellite channel in the grouped block.
    pub satellite_per_channel: usize,
    /// Pointwise fusion width and the following 3x3 block width.
    pub satellite: [usize; 2],
    pub fusion: usize,
    pub hidden: [usize; 2],
    pub deconv: [usize; 3],
}

impl Default for Widths {
    fn default() -> Self {
        Self {
            radar: [16, 32],
            satellite_per_channel: 2,
            satellite: [32, 32],
            fusion: 64,
            hidden: [64, 32],
            deconv: [32, 16, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub widths: Widths,
    /// Weight of the classification loss.
    pub alpha: f64,
    /// Weight of the regression loss.
    pub beta: f64,
    pub wm_mode: WeightMode,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            widths: Widths::default(),
            alpha: 1.0,
            beta: 1.0,
            wm_mode: WeightMode::Pyramid,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        let all = [
            w.radar[0],
            w.radar[1],
            w.satellite_per_channel,
            w.satellite[0],
            w.satellite[1],
            w.fusion,
            w.hidden[0],
            w.hidden[1],
            w.deconv[0],
            w.deconv[1],
            w.deconv[2],
        ];
        if all.contains(&0) {
            return config_err("every layer width must be positive");
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return config_err(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.variant == Variant::Tsmt && self.alpha == 0.0 && self.beta == 0.0 {
            return config_err("alpha and beta cannot both be zero");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0 && self.bn_eps > 0.0) {
            return config_err("batch-norm momentum must lie in (0, 1] and eps be positive");
        }
        Ok(())
    }
}

/// `alpha * l_c + beta * l_r`.
pub fn combined_loss(l_c: f64, l_r: f64, alpha: f64, beta: f64) -> Result<f64> {
    if alpha == 0.0 && beta == 0.0 {
        return config_err("alpha and beta cannot both be zero");
    }
    Ok(alpha * l_c + beta * l_r)
}
