//! Deterministic synthetic storms: advecting, growing anisotropic Gaussian
//! reflectivity cells and a satellite view derived from a smoothed copy of
//! the radar field.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sequence::{GridSequence, MAX_DBZ, NUM_SATELLITE_CHANNELS};
use crate::error::{config_err, Result};
use crate::rng::{substream, substream_seed};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StormCell {
    /// Position at frame 0, in radar pixels.
    pub row: f64,
    pub col: f64,
    /// Peak reflectivity at frame 0 (dBZ).
    pub amplitude: f64,
    /// Change in peak reflectivity per frame (dBZ).
    pub growth: f64,
    pub sigma_major: f64,
    pub sigma_minor: f64,
    /// Angle of the major axis, radians.
    pub orientation: f64,
    /// Displacement per frame (rows, cols).
    pub velocity: [f64; 2],
}

impl StormCell {
    pub fn stationary(row: f64, col: f64, amplitude: f64, sigma: f64) -> Self {
        Self {
            row,
            col,
            amplitude,
            growth: 0.0,
            sigma_major: sigma,
            sigma_minor: sigma,
            orientation: 0.0,
            velocity: [0.0, 0.0],
        }
    }

    fn is_valid(&self) -> bool {
        let finite = [
            self.row,
            self.col,
            self.amplitude,
            self.growth,
            self.sigma_major,
            self.sigma_minor,
            self.orientation,
            self.velocity[0],
            self.velocity[1],
        ]
        .iter()
        .all(|v| v.is_finite());
        finite && self.sigma_major > 0.0 && self.sigma_minor > 0.0
    }

    /// Reflectivity contributed at `(r, c)` in frame `k`.
    pub fn value(&self, k: usize, r: f64, c: f64) -> f64 {
        let amp = (self.amplitude + self.growth * k as f64).max(0.0);
        if amp == 0.0 {
            return 0.0;
        }
        let dr = r - (self.row + self.velocity[0] * k as f64);
        let dc = c - (self.col + self.velocity[1] * k as f64);
        let (s, co) = self.orientation.sin_cos();
        let u = co * dr + s * dc;
        let v = -s * dr + co * dc;
        let q = (u / self.sigma_major).powi(2) + (v / self.sigma_minor).powi(2);
        amp * (-0.5 * q).exp()
    }
}

/// Ranges for randomly drawn cells; each pair is `[low, high]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomCells {
    pub count: usize,
    pub amplitude: [f64; 2],
    pub growth: [f64; 2],
    pub sigma: [f64; 2],
    /// Minor/major axis ratio.
    pub aspect: [f64; 2],
    /// Maximum speed per axis, pixels per frame.
    pub max_speed: f64,
    /// Cells start at least this far from the grid edge.
    pub margin: f64,
}

impl Default for RandomCells {
    fn default() -> Self {
        Self {
            count: 6,
            amplitude: [20.0, 55.0],
            growth: [-1.0, 1.5],
            sigma: [10.0, 16.0],
            aspect: [0.5, 1.0],
            max_speed: 1.5,
            margin: 16.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellSource {
    Random(RandomCells),
    Explicit(Vec<StormCell>),
}

/// How the satellite channels respond to the radar field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SatelliteCoupling {
    /// Clear-sky brightness temperature of the first IR channel (K).
    pub tbb_baseline: f64,
    /// Per-channel offset added to the baseline, one per IR channel.
    pub tbb_offsets: Vec<f64>,
    /// Cloud-top cooling per dBZ of the smoothed radar proxy (K/dBZ), scaled per channel.
    pub cooling_per_dbz: f64,
    /// Clear-sky albedo of each visible channel.
    pub albedo_floor: Vec<f64>,
    pub albedo_ceiling: f64,
    /// dBZ scale of the saturating albedo response.
    pub albedo_scale_dbz: f64,
    pub noise_std: f64,
}

impl Default for SatelliteCoupling {
    fn default() -> Self {
        Self {
            tbb_baseline: 290.0,
            tbb_offsets: vec![0.0, -35.0, -45.0, -40.0, -8.0, -5.0, -3.0, -2.0, -6.0, -15.0],
            cooling_per_dbz: 1.2,
            albedo_floor: vec![0.08, 0.06, 0.05],
            albedo_ceiling: 0.9,
            albedo_scale_dbz: 25.0,
            noise_std: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStormConfig {
    /// Radar grid size; the satellite grid is half of each.
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub radar_interval_minutes: f64,
    pub cells: CellSource,
    pub satellite: SatelliteCoupling,
    pub seed: u64,
}

/// Days in the default synthetic corpus, two per fold.
pub const DEFAULT_DAYS: usize = 8;

impl Default for SyntheticStormConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            frames: 16,
            radar_interval_minutes: 6.0,
            cells: CellSource::Random(RandomCells::default()),
            satellite: SatelliteCoupling::default(),
            seed: 0,
        }
    }
}

impl SyntheticStormConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 || self.height % 2 != 0 || self.width % 2 != 0 {
            return config_err(format!(
                "synthetic grid must have even sides >= 2, got {}x{}",
                self.height, self.width
            ));
        }
        if self.frames == 0 {
            return config_err("synthetic sequence needs at least one frame");
        }
        if !(self.radar_interval_minutes.is_finite() && self.radar_interval_minutes > 0.0) {
            return config_err("radar interval must be positive and finite");
        }
        let s = &self.satellite;
        if s.tbb_offsets.len() != NUM_SATELLITE_CHANNELS - 3 || s.albedo_floor.len() != 3 {
            return config_err("satellite coupling needs 3 albedo floors and 10 IR offsets");
        }
        let coupling = [s.tbb_baseline, s.cooling_per_dbz, s.albedo_ceiling, s.albedo_scale_dbz, s.noise_std];
        if coupling
            .iter()
            .chain(&s.tbb_offsets)
            .chain(&s.albedo_floor)
            .any(|v| !v.is_finite())
            || s.albedo_scale_dbz <= 0.0
            || s.noise_std < 0.0
        {
            return config_err("satellite coupling coefficients must be finite (positive albedo scale)");
        }
        match &self.cells {
            CellSource::Explicit(cells) => {
                if !cells.iter().all(StormCell::is_valid) {
                    return config_err("storm cells need finite parameters and positive widths");
                }
            }
            CellSource::Random(r) => {
                let pairs = [r.amplitude, r.growth, r.sigma, r.aspect];
                if pairs.iter().any(|p| !(p[0].is_finite() && p[1].is_finite() && p[0] <= p[1]))
                    || r.sigma[0] <= 0.0
                    || r.aspect[0] <= 0.0
                    || !r.max_speed.is_finite()
                    || r.max_speed < 0.0
                    || !r.margin.is_finite()
                {
                    return config_err("random cell ranges must be finite [low, high] pairs");
                }
            }
        }
        Ok(())
    }

    /// Copy of this config for synthetic day `index`, with its own seed.
    pub fn for_day(&self, index: usize) -> Self {
        Self {
            seed: substream_seed(self.seed, "synth.day", index as u64),
            ..self.clone()
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

fn draw_cells(config: &SyntheticStormConfig) -> Vec<StormCell> {
    match &config.cells {
        CellSource::Explicit(cells) => cells.clone(),
        CellSource::Random(random) => {
            let mut rng = substream(config.seed, "synth.cells", 0);
            let span = |n: usize| {
                let lo = random.margin.min(n as f64 / 2.0);
                [lo, n as f64 - lo]
            };
            (0..random.count)
                .map(|_| {
                    let sigma = uniform(&mut rng, random.sigma);
                    StormCell {
                        row: uniform(&mut rng, span(config.height)),
                        col: uniform(&mut rng, span(config.width)),
                        amplitude: uniform(&mut rng, random.amplitude),
                        growth: uniform(&mut rng, random.growth),
                        sigma_major: sigma,
                        sigma_minor: sigma * uniform(&mut rng, random.aspect),
                        orientation: uniform(&mut rng, [0.0, std::f64::consts::PI]),
                        velocity: [
                            uniform(&mut rng, [-random.max_speed, random.max_speed]),
                            uniform(&mut rng, [-random.max_speed, random.max_speed]),
                        ],
                    }
                })
                .collect()
        }
    }
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

/// Half-resolution smoothed radar proxy: 2x2 block mean then a 3x3 box blur
/// (edge-truncated).
fn radar_proxy(frame: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (hs, ws) = (h / 2, w / 2);
    let mut block = vec![0.0; hs * ws];
    for i in 0..hs {
        for j in 0..ws {
            let r = 2 * i;
            let c = 2 * j;
            block[i * ws + j] = 0.25
                * (frame[r * w + c] + frame[r * w + c + 1] + frame[(r + 1) * w + c] + frame[(r + 1) * w + c + 1]);
        }
    }
    let mut out = vec![0.0; hs * ws];
    for i in 0..hs {
        for j in 0..ws {
            let mut sum = 0.0;
            let mut n = 0.0;
            for a in i.saturating_sub(1)..(i + 2).min(hs) {
                for b in j.saturating_sub(1)..(j + 2).min(ws) {
                    sum += block[a * ws + b];
                    n += 1.0;
                }
            }
            out[i * ws + j] = sum / n;
        }
    }
    out
}

/// Generates one synthetic sequence. Satellite frames accompany every other
/// radar frame, starting with the first.
pub fn synth_generate(config: &SyntheticStormConfig) -> Result<GridSequence> {
    config.validate()?;
    let (h, w, frames) = (config.height, config.width, config.frames);
    let cells = draw_cells(config);

    let mut radar = Vec::with_capacity(frames * h * w);
    for k in 0..frames {
        for r in 0..h {
            for c in 0..w {
                let v: f64 = cells.iter().map(|cell| cell.value(k, r as f64, c as f64)).sum();
                radar.push(round_f32(v.clamp(0.0, MAX_DBZ)));
            }
        }
    }

    let coupling = &config.satellite;
    let mut noise_rng = substream(config.seed, "synth.noise", 0);
    let normal = rand_distr::Normal::new(0.0, coupling.noise_std.max(0.0))
        .expect("noise std validated as finite and nonnegative");
    let sat_frames: Vec<usize> = (0..frames).step_by(2).collect();
    let (hs, ws) = (h / 2, w / 2);
    let mut satellite = Vec::with_capacity(sat_frames.len() * NUM_SATELLITE_CHANNELS * hs * ws);
    for &k in &sat_frames {
        let proxy = radar_proxy(&radar[k * h * w..(k + 1) * h * w], h, w);
        for ch in 0..NUM_SATELLITE_CHANNELS {
            for &p in &proxy {
                let noise = if coupling.noise_std > 0.0 {
                    rand_distr::Distribution::sample(&normal, &mut noise_rng)
                } else {
                    0.0
                };
                let value = if ch < 3 {
                    let floor = coupling.albedo_floor[ch];
                    let response = 1.0 - (-p / coupling.albedo_scale_dbz).exp();
                    (floor + (coupling.albedo_ceiling - floor) * response + 0.01 * noise).clamp(0.0, 1.0)
                } else {
                    let ir = ch - 3;
                    // longer-wave window channels see the cloud top most strongly
                    let sensitivity = 0.5 + 0.05 * ir as f64;
                    coupling.tbb_baseline + coupling.tbb_offsets[ir] - coupling.cooling_per_dbz * sensitivity * p
                        + noise
                };
                satellite.push(round_f32(value));
            }
        }
    }

    let dt = config.radar_interval_minutes;
    GridSequence::new(
        (0..frames).map(|k| k as f64 * dt).collect(),
        Tensor::new(vec![frames, h, w], radar)?,
        sat_frames.iter().map(|&k| k as f64 * dt).collect(),
        Tensor::new(vec![sat_frames.len(), NUM_SATELLITE_CHANNELS, hs, ws], satellite)?,
    )
}

/// One sequence per synthetic day, each seeded from `config.seed` and the day index.
pub fn synth_days(config: &SyntheticStormConfig, days: usize) -> Result<Vec<GridSequence>> {
    (0..days).map(|d| synth_generate(&config.for_day(d))).collect()
}
