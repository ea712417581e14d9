use super::{ModelConfig, Variant, WeightMatrix};
use crate::data::{
    Batch, Range, NUM_SATELLITE_CHANNELS, RADAR_HISTORY, RADAR_PATCH, REGRESSION_PATCH, SATELLITE_HISTORY,
    SATELLITE_PATCH, STORM_DBZ,
};
use crate::error::{shape_err, Result};
use crate::tensor::{BatchNormMode, ConvGeometry, ParamId, ParamStore, Tape, Tensor, Var};

/// Reflectivity that maps to a storm probability of 1 when a regression-only
/// variant is scored as a classifier; 35 dBZ lands exactly on 0.5.
const FULL_SCALE_DBZ: f64 = 2.0 * STORM_DBZ;

/// How a tensor is initialized before training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean Gaussian with standard deviation `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    weight: ParamId,
    bias: Option<ParamId>,
    norm: Option<Norm>,
}

#[derive(Clone, Copy, Debug)]
struct RadarStream {
    temporal: [Layer; 2],
    spatial: Layer,
}

#[derive(Clone, Copy, Debug)]
struct SatelliteStream {
    grouped: Layer,
    pointwise: Layer,
    spatial: Layer,
}

#[derive(Clone, Copy, Debug)]
struct Classifier {
    dense: [Layer; 3],
}

#[derive(Clone, Copy, Debug)]
struct Regressor {
    up: [Layer; 3],
    out: Layer,
}

struct Builder {
    store: ParamStore,
    init: Vec<(ParamId, Init)>,
}

impl Builder {
    fn tensor(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<ParamId> {
        let value = Tensor::zeros(shape);
        let id = if trainable {
            self.store.add(name, value)?
        } else {
            self.store.add_buffer(name, value)?
        };
        self.init.push((id, init));
        Ok(id)
    }

    /// Weight of shape `shape`; a bias unless batch norm follows.
    fn layer(&mut self, name: &str, shape: &[usize], fan_in: usize, normed: bool) -> Result<Layer> {
        let out_channels = if name.contains("deconv") { shape[1] } else { shape[0] };
        let weight = self.tensor(&format!("{name}.weight"), shape, Init::HeNormal { fan_in }, true)?;
        if normed {
            let c = [out_channels];
            let norm = Norm {
                gamma: self.tensor(&format!("{name}.bn.gamma"), &c, Init::Ones, true)?,
                beta: self.tensor(&format!("{name}.bn.beta"), &c, Init::Zeros, true)?,
                mean: self.tensor(&format!("{name}.bn.running_mean"), &c, Init::Zeros, false)?,
                var: self.tensor(&format!("{name}.bn.running_var"), &c, Init::Ones, false)?,
            };
            Ok(Layer {
                weight,
                bias: None,
                norm: Some(norm),
            })
        } else {
            let bias = self.tensor(&format!("{name}.bias"), &[out_channels], Init::Zeros, true)?;
            Ok(Layer {
                weight,
                bias: Some(bias),
                norm: None,
            })
        }
    }
}

/// Which heads a forward pass evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub classify: bool,
    pub regress: bool,
}

impl Heads {
    pub fn all(variant: Variant) -> Self {
        Self {
            classify: variant.has_classifier(),
            regress: variant.has_regressor(),
        }
    }

    /// Heads whose loss carries weight during training; a zero-weighted
    /// head of the multi-task variant is skipped entirely.
    pub fn for_training(config: &ModelConfig) -> Self {
        let multi = config.variant == Variant::Tsmt;
        Self {
            classify: config.variant.has_classifier() && (!multi || config.alpha > 0.0),
            regress: config.variant.has_regressor() && (!multi || config.beta > 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// Feature map feeding the heads, `[N, C, 6, 6]`.
    pub features: Var,
    /// Softmax class probabilities `[N, 2]`.
    pub probs: Option<Var>,
    /// Normalized reflectivity field `[N, 1, 48, 48]`.
    pub field: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub classification: Option<Var>,
    pub regression: Option<Var>,
    pub total: Var,
}

/// Evaluation-mode outputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Storm probability per sample.
    pub scores: Vec<f64>,
    /// Predicted reflectivity `[N, 48, 48]` in dBZ, for variants with a regression head.
    pub field_dbz: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    init: Vec<(ParamId, Init)>,
    radar: RadarStream,
    satellite: Option<SatelliteStream>,
    fusion: Option<Layer>,
    classifier: Option<Classifier>,
    regressor: Option<Regressor>,
    weights: WeightMatrix,
}

impl Model {
    /// Builds the variant's layers with all tensors zeroed; see
    /// [`crate::train::init_params`] for the initial values.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let w = config.widths.clone();
        let v = config.variant;
        let mut b = Builder {
            store: ParamStore::new(),
            init: Vec::new(),
        };
        let radar = RadarStream {
            temporal: [
                b.layer("radar.conv1", &[w.radar[0], 1, 3, 3, 3], 27, true)?,
                b.layer("radar.conv2", &[w.radar[1], w.radar[0], 3, 3, 3], w.radar[0] * 27, true)?,
            ],
            spatial: b.layer("radar.conv3", &[w.radar[1], w.radar[1], 3, 3], w.radar[1] * 9, true)?,
        };
        let grouped_out = NUM_SATELLITE_CHANNELS * w.satellite_per_channel;
        let satellite = if v.uses_satellite() {
            Some(SatelliteStream {
                grouped: b.layer("satellite.temporal", &[grouped_out, 1, 3, 3, 3], 27, true)?,
                pointwise: b.layer("satellite.pointwise", &[w.satellite[0], grouped_out, 1, 1], grouped_out, true)?,
                spatial: b.layer("satellite.conv", &[w.satellite[1], w.satellite[0], 3, 3], w.satellite[0] * 9, true)?,
            })
        } else {
            None
        };
        let fusion = if v.uses_satellite() {
            let c_in = w.radar[1] + w.satellite[1];
            Some(b.layer("fusion.conv", &[w.fusion, c_in, 3, 3], c_in * 9, false)?)
        } else {
            None
        };
        let feat = if v.uses_satellite() { w.fusion } else { w.radar[1] };
        let classifier = if v.has_classifier() {
            Some(Classifier {
                dense: [
                    b.layer("classifier.fc1", &[w.hidden[0], feat], feat, false)?,
                    b.layer("classifier.fc2", &[w.hidden[1], w.hidden[0]], w.hidden[0], false)?,
                    b.layer("classifier.fc3", &[2, w.hidden[1]], w.hidden[1], false)?,
                ],
            })
        } else {
            None
        };
        let regressor = if v.has_regressor() {
            let d = w.deconv;
            // a stride-2, 4x4 transposed kernel touches each output with k^2 / s^2 = 4 taps per input channel
            Some(Regressor {
                up: [
                    b.layer("regressor.deconv1", &[feat, d[0], 4, 4], feat * 4, true)?,
                    b.layer("regressor.deconv2", &[d[0], d[1], 4, 4], d[0] * 4, true)?,
                    b.layer("regressor.deconv3", &[d[1], d[2], 4, 4], d[1] * 4, true)?,
                ],
                out: b.layer("regressor.deconv_out", &[d[2], 1, 3, 3], d[2] * 9, false)?,
            })
        } else {
            None
        };
        let mut model = Self {
            weights: WeightMatrix::new(config.wm_mode),
            config,
            store: b.store,
            init: b.init,
            radar,
            satellite,
            fusion,
            classifier,
            regressor,
        };
        // usable before training: unit scales and variances, zero elsewhere
        for &(id, init) in &model.init {
            if init == Init::Ones {
                model.store.value_mut(id).data_mut().fill(1.0);
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Initialization rule of every tensor, in creation order.
    pub fn init_rules(&self) -> &[(ParamId, Init)] {
        &self.init
    }

    pub fn weight_matrix(&self) -> &WeightMatrix {
        &self.weights
    }

    /// Trainable scalars, including batch-norm scales and shifts.
    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    fn normed(&mut self, tape: &mut Tape, x: Var, layer: Layer, mode: BatchNormMode) -> Result<Var> {
        let Some(n) = layer.norm else {
            return Ok(x);
        };
        let gamma = tape.param(&self.store, n.gamma);
        let beta = tape.param(&self.store, n.beta);
        let mut mean = self.store.value(n.mean).clone();
        let mut var = self.store.value(n.var).clone();
        let (momentum, eps) = (self.config.bn_momentum, self.config.bn_eps);
        let y = tape.batch_norm(x, gamma, beta, &mut mean, &mut var, mode, momentum, eps)?;
        *self.store.value_mut(n.mean) = mean;
        *self.store.value_mut(n.var) = var;
        Ok(y)
    }

    fn weights_of(&self, tape: &mut Tape, layer: Layer) -> (Var, Option<Var>) {
        let w = tape.param(&self.store, layer.weight);
        let b = layer.bias.map(|b| tape.param(&self.store, b));
        (w, b)
    }

    /// conv3d, batch norm, relu.
    fn block3d(&mut self, tape: &mut Tape, x: Var, layer: Layer, geom: ConvGeometry, mode: BatchNormMode) -> Result<Var> {
        let (w, b) = self.weights_of(tape, layer);
        let y = tape.conv3d(x, w, b, geom)?;
        let y = self.normed(tape, y, layer, mode)?;
        Ok(tape.relu(y))
    }

    /// conv2d, batch norm (when present), relu.
    fn block2d(&mut self, tape: &mut Tape, x: Var, layer: Layer, padding: usize, mode: BatchNormMode) -> Result<Var> {
        let (w, b) = self.weights_of(tape, layer);
        let y = tape.conv2d(x, w, b, 1, padding)?;
        let y = self.normed(tape, y, layer, mode)?;
        Ok(tape.relu(y))
    }

    /// `[N, 1, 5, 54, 54]` radar history to `[N, C, 6, 6]`.
    pub fn radar_stream(&mut self, tape: &mut Tape, x: Var, mode: BatchNormMode) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 5 || s[1..] != [1, RADAR_HISTORY, RADAR_PATCH, RADAR_PATCH] {
            return shape_err(format!("radar input must be [N, 1, 5, 54, 54], got {s:?}"));
        }
        let n = s[0];
        let l = self.radar;
        let same = ConvGeometry::new([1, 1, 1], [0, 1, 1], 1);
        let y = self.block3d(tape, x, l.temporal[0], same, mode)?; // [N, C1, 3, 54, 54]
        let y = tape.max_pool3d(y, [1, 2, 2], [1, 2, 2])?; // 27
        let y = self.block3d(tape, y, l.temporal[1], same, mode)?; // [N, C2, 1, 27, 27]
        let c = tape.shape(y)[1];
        let y = tape.reshape(y, &[n, c, 27, 27])?;
        let y = tape.max_pool2d(y, 2, 2)?; // 13
        let y = self.block2d(tape, y, l.spatial, 1, mode)?;
        tape.max_pool2d(y, 2, 2) // 6
    }

    /// Per-channel temporal stage of the satellite stream: `[N, 13, 3, 27, 27]`
    /// to `[N, 13 * k, 27, 27]`, where output channels `k*i..k*(i+1)` see
    /// only input channel `i`.
    pub fn satellite_temporal(&mut self, tape: &mut Tape, x: Var, mode: BatchNormMode) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 5 || s[1..] != [NUM_SATELLITE_CHANNELS, SATELLITE_HISTORY, SATELLITE_PATCH, SATELLITE_PATCH] {
            return shape_err(format!("satellite input must be [N, 13, 3, 27, 27], got {s:?}"));
        }
        let n = s[0];
        let Some(l) = self.satellite else {
            return shape_err(format!("{} has no satellite stream", self.config.variant));
        };
        let geom = ConvGeometry::new([1, 1, 1], [0, 1, 1], NUM_SATELLITE_CHANNELS);
        let y = self.block3d(tape, x, l.grouped, geom, mode)?;
        let c = tape.shape(y)[1];
        tape.reshape(y, &[n, c, SATELLITE_PATCH, SATELLITE_PATCH])
    }

    /// `[N, 13, 3, 27, 27]` satellite history to `[N, C, 6, 6]`.
    pub fn satellite_stream(&mut self, tape: &mut Tape, x: Var, mode: BatchNormMode) -> Result<Var> {
        let y = self.satellite_temporal(tape, x, mode)?;
        let l = self.satellite.expect("checked by satellite_temporal");
        let y = self.block2d(tape, y, l.pointwise, 0, mode)?;
        let y = tape.max_pool2d(y, 2, 2)?; // 13
        let y = self.block2d(tape, y, l.spatial, 1, mode)?;
        tape.max_pool2d(y, 2, 2) // 6
    }

    /// Channel concatenation of both stream maps, then conv2d and relu.
    pub fn fuse(&mut self, tape: &mut Tape, radar: Var, satellite: Var) -> Result<Var> {
        let (rs, ss) = (tape.shape(radar), tape.shape(satellite));
        if rs.len() != 4 || ss.len() != 4 || rs[0] != ss[0] || rs[2..] != ss[2..] {
            return shape_err(format!("cannot fuse feature maps {rs:?} and {ss:?}"));
        }
        let Some(layer) = self.fusion else {
            return shape_err(format!("{} has no fusion stage", self.config.variant));
        };
        let stacked = tape.stack(&[radar, satellite], 1)?;
        self.block2d(tape, stacked, layer, 1, BatchNormMode::Eval)
    }

    /// Pooled dense head: `[N, C, H, W]` to softmax probabilities `[N, 2]`.
    pub fn classify(&mut self, tape: &mut Tape, features: Var) -> Result<Var> {
        let Some(head) = self.classifier else {
            return shape_err(format!("{} has no classification head", self.config.variant));
        };
        let pooled = tape.adaptive_avg_pool2d(features)?;
        let s = tape.shape(pooled).to_vec();
        let mut h = tape.reshape(pooled, &[s[0], s[1]])?;
        for (i, layer) in head.dense.iter().enumerate() {
            let (w, b) = self.weights_of(tape, *layer);
            h = tape.linear(h, w, b)?;
            if i < 2 {
                h = tape.relu(h);
            }
        }
        tape.softmax(h, 1)
    }

    /// Transposed-convolution head: `[N, C, 6, 6]` to `[N, 1, 48, 48]`.
    pub fn regress(&mut self, tape: &mut Tape, features: Var, mode: BatchNormMode) -> Result<Var> {
        let Some(head) = self.regressor else {
            return shape_err(format!("{} has no regression head", self.config.variant));
        };
        let mut h = features;
        for layer in head.up {
            let (w, b) = self.weights_of(tape, layer);
            h = tape.conv_transpose2d(h, w, b, 2, 1, 0)?;
            h = self.normed(tape, h, layer, mode)?;
            h = tape.relu(h);
        }
        let (w, b) = self.weights_of(tape, head.out);
        tape.conv_transpose2d(h, w, b, 1, 1, 0)
    }

    /// Runs the streams the variant owns and the requested heads.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        radar: &Tensor,
        satellite: Option<&Tensor>,
        heads: Heads,
        mode: BatchNormMode,
    ) -> Result<Outputs> {
        let r = tape.constant(radar.clone());
        let r = self.radar_stream(tape, r, mode)?;
        let features = if self.config.variant.uses_satellite() {
            let Some(sat) = satellite else {
                return shape_err(format!("{} needs satellite input", self.config.variant));
            };
            if sat.shape().first() != radar.shape().first() {
                return shape_err("radar and satellite batches differ in size");
            }
            let s = tape.constant(sat.clone());
            let s = self.satellite_stream(tape, s, mode)?;
            self.fuse(tape, r, s)?
        } else {
            r
        };
        let probs = if heads.classify { Some(self.classify(tape, features)?) } else { None };
        let field = if heads.regress { Some(self.regress(tape, features, mode)?) } else { None };
        Ok(Outputs { features, probs, field })
    }

    /// Training objective of the variant on `batch`.
    pub fn loss(&mut self, tape: &mut Tape, batch: &Batch, mode: BatchNormMode) -> Result<LossVars> {
        let heads = Heads::for_training(&self.config);
        let out = self.forward(tape, &batch.radar, Some(&batch.satellite), heads, mode)?;
        let classification = match out.probs {
            Some(p) => Some(tape.cross_entropy(p, &batch.cls_labels)?),
            None => None,
        };
        let regression = match out.field {
            Some(f) => Some(tape.weighted_squared_error(f, &batch.reg_labels, self.weights.values())?),
            None => None,
        };
        let (alpha, beta) = (self.config.alpha, self.config.beta);
        let total = match (classification, regression, self.config.variant) {
            (Some(c), Some(r), _) => tape.weighted_sum(c, alpha, r, beta)?,
            (Some(c), None, Variant::Tsmt) => tape.scale(c, alpha),
            (None, Some(r), Variant::Tsmt) => tape.scale(r, beta),
            (Some(c), None, _) => c,
            (None, Some(r), _) => r,
            (None, None, _) => unreachable!("validated configs train at least one head"),
        };
        Ok(LossVars {
            classification,
            regression,
            total,
        })
    }

    /// Evaluation-mode storm probabilities and reflectivity fields.
    /// Regression-only variants are scored by their predicted reflectivity
    /// at the patch center, scaled so that 35 dBZ maps to 0.5.
    pub fn predict(&mut self, batch: &Batch, radar_range: &Range) -> Result<Prediction> {
        let mut tape = Tape::new();
        let heads = Heads::all(self.config.variant);
        let out = self.forward(&mut tape, &batch.radar, Some(&batch.satellite), heads, BatchNormMode::Eval)?;
        let field_dbz = out.field.map(|f| {
            let v = tape.value(f);
            let n = v.shape()[0];
            let data = v.data().iter().map(|&y| radar_range.invert(y.clamp(-1.0, 1.0))).collect();
            Tensor::new(vec![n, REGRESSION_PATCH, REGRESSION_PATCH], data).expect("48x48 fields")
        });
        let scores = match (out.probs, &field_dbz) {
            (Some(p), _) => tape.value(p).data().chunks(2).map(|row| row[1]).collect(),
            (None, Some(field)) => {
                let plane = REGRESSION_PATCH * REGRESSION_PATCH;
                let center = (REGRESSION_PATCH / 2) * REGRESSION_PATCH + REGRESSION_PATCH / 2;
                field
                    .data()
                    .chunks(plane)
                    .map(|f| (f[center] / FULL_SCALE_DBZ).clamp(0.0, 1.0))
                    .collect()
            }
            (None, None) => unreachable!("every variant has a head"),
        };
        Ok(Prediction { scores, field_dbz })
    }
}
