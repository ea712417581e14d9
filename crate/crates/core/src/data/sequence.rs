//! Co-registered radar and satellite grid sequences and the per-pixel sample
//! construction rules: labeling, patch extraction and regression targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Canonical satellite channel order (visible albedo, then IR brightness temperature).
pub const SATELLITE_CHANNELS: [&str; 13] = [
    "albedo_04", "albedo_05", "albedo_06", "tbb_07", "tbb_08", "tbb_09", "tbb_10", "tbb_11",
    "tbb_12", "tbb_13", "tbb_14", "tbb_15", "tbb_16",
];
pub const NUM_SATELLITE_CHANNELS: usize = SATELLITE_CHANNELS.len();

pub const RADAR_HISTORY: usize = 5;
pub const SATELLITE_HISTORY: usize = 3;
pub const RADAR_PATCH: usize = 54;
pub const SATELLITE_PATCH: usize = 27;
pub const REGRESSION_PATCH: usize = 48;

/// Reflectivity at or above which a pixel counts as convective.
pub const STORM_DBZ: f64 = 35.0;
pub const MAX_DBZ: f64 = 80.0;
pub const HORIZON_MINUTES: f64 = 30.0;
/// How far the regression frame may sit from exactly `t + 30 min`.
pub const HORIZON_TOLERANCE_MINUTES: f64 = 3.0;

/// Top-left offset of a centered window of even size `n`: the target pixel
/// lands on index `n / 2`, the lower-right cell of the central 2x2.
pub const fn window_origin(center: usize, n: usize) -> Option<usize> {
    center.checked_sub(n / 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Positive if any frame in `(t, t + 30 min]` reaches the threshold.
    #[default]
    AnyFrame,
    /// Positive only if every frame in `(t, t + 30 min]` reaches it.
    Sustained,
}

impl std::fmt::Display for LabelRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AnyFrame => "any-frame",
            Self::Sustained => "sustained",
        })
    }
}

impl std::str::FromStr for LabelRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any-frame" => Ok(Self::AnyFrame),
            "sustained" => Ok(Self::Sustained),
            other => Err(Error::Config(format!(
                "unknown label rule '{other}' (expected any-frame or sustained)"
            ))),
        }
    }
}

/// Radar frames `[T, H, W]` in dBZ and satellite frames `[T_s, 13, H/2, W/2]`,
/// each with timestamps in minutes. Radar pixel `(2i..2i+1, 2j..2j+1)` lies
/// inside satellite pixel `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSequence {
    radar_times: Vec<f64>,
    radar: Tensor,
    satellite_times: Vec<f64>,
    satellite: Tensor,
}

fn increasing(times: &[f64]) -> bool {
    times.iter().all(|t| t.is_finite()) && times.windows(2).all(|w| w[0] < w[1])
}

impl GridSequence {
    pub fn new(
        radar_times: Vec<f64>,
        radar: Tensor,
        satellite_times: Vec<f64>,
        satellite: Tensor,
    ) -> Result<Self> {
        let rs = radar.shape();
        let ss = satellite.shape();
        if rs.len() != 3 || ss.len() != 4 {
            return Err(Error::Data(format!(
                "radar must be [T, H, W] and satellite [T, 13, H/2, W/2]; got {rs:?} and {ss:?}"
            )));
        }
        if ss[1] != NUM_SATELLITE_CHANNELS {
            return Err(Error::Data(format!(
                "satellite frames carry {} channels, expected {NUM_SATELLITE_CHANNELS}",
                ss[1]
            )));
        }
        if rs[1] != 2 * ss[2] || rs[2] != 2 * ss[3] {
            return Err(Error::Data(format!(
                "radar grid {}x{} is not twice the satellite grid {}x{}",
                rs[1], rs[2], ss[2], ss[3]
            )));
        }
        if radar_times.len() != rs[0] || satellite_times.len() != ss[0] {
            return Err(Error::Data("timestamp count does not match frame count".into()));
        }
        if !increasing(&radar_times) || !increasing(&satellite_times) {
            return Err(Error::Data("timestamps must be finite and strictly increasing".into()));
        }
        if let Some(v) = radar.data().iter().find(|v| !(0.0..=MAX_DBZ).contains(*v)) {
            return Err(Error::Data(format!("radar value {v} outside [0, {MAX_DBZ}] dBZ")));
        }
        if !satellite.is_finite() {
            return Err(Error::Data("satellite frames contain non-finite values".into()));
        }
        Ok(Self {
            radar_times,
            radar,
            satellite_times,
            satellite,
        })
    }

    /// Builds a sequence from individual frames; satellite frames come as
    /// named channel lists in canonical order.
    pub fn from_frames(
        radar_frames: Vec<(f64, Tensor)>,
        satellite_frames: Vec<(f64, Vec<(String, Tensor)>)>,
    ) -> Result<Self> {
        let (Some(first_r), Some(first_s)) = (radar_frames.first(), satellite_frames.first()) else {
            return Err(Error::Data("sequence needs at least one radar and one satellite frame".into()));
        };
        let rshape = first_r.1.shape().to_vec();
        let mut radar = Vec::new();
        let mut radar_times = Vec::new();
        for (t, grid) in &radar_frames {
            if grid.shape() != rshape.as_slice() || rshape.len() != 2 {
                return Err(Error::Data(format!("radar frame shape {:?} differs", grid.shape())));
            }
            radar_times.push(*t);
            radar.extend_from_slice(grid.data());
        }
        let mut satellite = Vec::new();
        let mut satellite_times = Vec::new();
        let mut sshape = None;
        for (t, channels) in &satellite_frames {
            let named: Vec<(&str, &Tensor)> = channels.iter().map(|(n, g)| (n.as_str(), g)).collect();
            let stacked = stack_satellite_channels(&named)?;
            if *sshape.get_or_insert_with(|| stacked.shape().to_vec()) != stacked.shape() {
                return Err(Error::Data("satellite frame shapes differ".into()));
            }
            satellite_times.push(*t);
            satellite.extend_from_slice(stacked.data());
        }
        let sshape = sshape.expect("at least one satellite frame");
        let _ = first_s;
        Self::new(
            radar_times,
            Tensor::new(vec![radar_frames.len(), rshape[0], rshape[1]], radar)?,
            satellite_times,
            Tensor::new(
                vec![satellite_frames.len(), sshape[0], sshape[1], sshape[2]],
                satellite,
            )?,
        )
    }

    pub fn radar(&self) -> &Tensor {
        &self.radar
    }

    pub fn satellite(&self) -> &Tensor {
        &self.satellite
    }

    pub fn radar_times(&self) -> &[f64] {
        &self.radar_times
    }

    pub fn satellite_times(&self) -> &[f64] {
        &self.satellite_times
    }

    pub fn radar_len(&self) -> usize {
        self.radar_times.len()
    }

    pub fn height(&self) -> usize {
        self.radar.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.radar.shape()[2]
    }

    #[inline]
    pub fn radar_at(&self, t: usize, r: usize, c: usize) -> f64 {
        let (h, w) = (self.height(), self.width());
        self.radar.data()[(t * h + r) * w + c]
    }

    #[inline]
    fn satellite_at(&self, s: usize, ch: usize, r: usize, c: usize) -> f64 {
        let sh = self.satellite.shape();
        self.satellite.data()[((s * sh[1] + ch) * sh[2] + r) * sh[3] + c]
    }

    /// Satellite frame nearest in time to radar frame `t` (ties go to the earlier frame).
    pub fn satellite_index_for(&self, t: usize) -> usize {
        let target = self.radar_times[t];
        let mut best = 0;
        for (i, &st) in self.satellite_times.iter().enumerate() {
            if (st - target).abs() < (self.satellite_times[best] - target).abs() {
                best = i;
            }
        }
        best
    }

    /// Radar frames with timestamps in `(t, t + 30 min]`, provided the
    /// sequence extends to the horizon.
    pub fn horizon_frames(&self, t: usize) -> Option<Vec<usize>> {
        self.regression_frame(t)?;
        let t0 = self.radar_times[t];
        Some(
            (t + 1..self.radar_len())
                .filter(|&k| self.radar_times[k] <= t0 + HORIZON_MINUTES + 1e-9)
                .collect(),
        )
    }

    /// Radar frame nearest to `t + 30 min`, if one lies within tolerance.
    pub fn regression_frame(&self, t: usize) -> Option<usize> {
        let target = self.radar_times[t] + HORIZON_MINUTES;
        (t + 1..self.radar_len())
            .filter(|&k| (self.radar_times[k] - target).abs() <= HORIZON_TOLERANCE_MINUTES)
            .min_by(|&a, &b| {
                let da = (self.radar_times[a] - target).abs();
                let db = (self.radar_times[b] - target).abs();
                da.total_cmp(&db)
            })
    }
}

/// Classification label of pixel `(r, c)` at radar frame `t`, or `None` when
/// the sequence does not reach 30 minutes past `t`.
pub fn label_pixel(seq: &GridSequence, t: usize, r: usize, c: usize, rule: LabelRule) -> Option<u8> {
    let frames = seq.horizon_frames(t)?;
    let hot = |&k: &usize| seq.radar_at(k, r, c) >= STORM_DBZ;
    let positive = match rule {
        LabelRule::AnyFrame => frames.iter().any(hot),
        LabelRule::Sustained => !frames.is_empty() && frames.iter().all(hot),
    };
    Some(u8::from(positive))
}

struct PatchWindow {
    t_first: usize,
    r0: usize,
    c0: usize,
    s: usize,
    s_first: usize,
}

fn patch_window(seq: &GridSequence, t: usize, r: usize, c: usize) -> Option<PatchWindow> {
    let t_first = t.checked_sub(RADAR_HISTORY - 1)?;
    let r0 = window_origin(r, RADAR_PATCH)?;
    let c0 = window_origin(c, RADAR_PATCH)?;
    if r0 + RADAR_PATCH > seq.height() || c0 + RADAR_PATCH > seq.width() {
        return None;
    }
    let s = seq.satellite_index_for(t);
    let s_first = s.checked_sub(SATELLITE_HISTORY - 1)?;
    let ss = seq.satellite.shape();
    if r0 / 2 + SATELLITE_PATCH > ss[2] || c0 / 2 + SATELLITE_PATCH > ss[3] {
        return None;
    }
    Some(PatchWindow { t_first, r0, c0, s, s_first })
}

/// Whether [`extract_patches`] and [`regression_label`] both succeed at `(t, r, c)`.
pub fn sample_fits(seq: &GridSequence, t: usize, r: usize, c: usize) -> bool {
    let reg_fits = window_origin(r, REGRESSION_PATCH)
        .zip(window_origin(c, REGRESSION_PATCH))
        .is_some_and(|(r0, c0)| r0 + REGRESSION_PATCH <= seq.height() && c0 + REGRESSION_PATCH <= seq.width());
    reg_fits && seq.regression_frame(t).is_some() && patch_window(seq, t, r, c).is_some()
}

/// Radar patch `[1, 5, 54, 54]` over frames `t-4..=t` and satellite patch
/// `[13, 3, 27, 27]` over the three satellite frames ending at the one paired
/// with `t`. `None` if history or window bounds are insufficient.
pub fn extract_patches(seq: &GridSequence, t: usize, r: usize, c: usize) -> Option<(Tensor, Tensor)> {
    let PatchWindow { t_first, r0, c0, s, s_first } = patch_window(seq, t, r, c)?;
    let (sr0, sc0) = (r0 / 2, c0 / 2);

    let w = seq.width();
    let mut radar = Vec::with_capacity(RADAR_HISTORY * RADAR_PATCH * RADAR_PATCH);
    for k in t_first..=t {
        for i in r0..r0 + RADAR_PATCH {
            let row = (k * seq.height() + i) * w;
            radar.extend_from_slice(&seq.radar.data()[row + c0..row + c0 + RADAR_PATCH]);
        }
    }
    let mut sat = Vec::with_capacity(NUM_SATELLITE_CHANNELS * SATELLITE_HISTORY * SATELLITE_PATCH * SATELLITE_PATCH);
    for ch in 0..NUM_SATELLITE_CHANNELS {
        for k in s_first..=s {
            for i in sr0..sr0 + SATELLITE_PATCH {
                for j in sc0..sc0 + SATELLITE_PATCH {
                    sat.push(seq.satellite_at(k, ch, i, j));
                }
            }
        }
    }
    Some((
        Tensor::new(vec![1, RADAR_HISTORY, RADAR_PATCH, RADAR_PATCH], radar).ok()?,
        Tensor::new(
            vec![NUM_SATELLITE_CHANNELS, SATELLITE_HISTORY, SATELLITE_PATCH, SATELLITE_PATCH],
            sat,
        )
        .ok()?,
    ))
}

/// Raw dBZ field `[48, 48]` at the frame nearest `t + 30 min`, centered on `(r, c)`.
pub fn regression_label(seq: &GridSequence, t: usize, r: usize, c: usize) -> Option<Tensor> {
    let k = seq.regression_frame(t)?;
    let r0 = window_origin(r, REGRESSION_PATCH)?;
    let c0 = window_origin(c, REGRESSION_PATCH)?;
    if r0 + REGRESSION_PATCH > seq.height() || c0 + REGRESSION_PATCH > seq.width() {
        return None;
    }
    let mut out = Vec::with_capacity(REGRESSION_PATCH * REGRESSION_PATCH);
    for i in r0..r0 + REGRESSION_PATCH {
        for j in c0..c0 + REGRESSION_PATCH {
            out.push(seq.radar_at(k, i, j));
        }
    }
    Tensor::new(vec![REGRESSION_PATCH, REGRESSION_PATCH], out).ok()
}

/// Stacks 13 named `[H, W]` channel grids into `[13, H, W]`. Names must
/// appear exactly in [`SATELLITE_CHANNELS`] order.
pub fn stack_satellite_channels(channels: &[(&str, &Tensor)]) -> Result<Tensor> {
    for (i, expected) in SATELLITE_CHANNELS.iter().enumerate() {
        match channels.get(i) {
            None => {
                return Err(Error::Data(format!("missing satellite channel '{expected}'")));
            }
            Some((name, _)) if name != expected => {
                return Err(Error::Data(format!(
                    "satellite channel {i} is '{name}', expected '{expected}'"
                )));
            }
            _ => {}
        }
    }
    if channels.len() != NUM_SATELLITE_CHANNELS {
        return Err(Error::Data(format!(
            "{} satellite channels supplied, expected {NUM_SATELLITE_CHANNELS}",
            channels.len()
        )));
    }
    let shape = channels[0].1.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Data(format!("satellite channel grids must be 2D, got {shape:?}")));
    }
    let mut data = Vec::with_capacity(NUM_SATELLITE_CHANNELS * shape[0] * shape[1]);
    for (name, grid) in channels {
        if grid.shape() != shape.as_slice() {
            return Err(Error::Data(format!("channel '{name}' has shape {:?}", grid.shape())));
        }
        data.extend_from_slice(grid.data());
    }
    Tensor::new(vec![NUM_SATELLITE_CHANNELS, shape[0], shape[1]], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Radar frames every 6 min from per-frame fill functions; satellite frames
    /// every 12 min, all zero.
    fn sequence(frames: usize, h: usize, fill: impl Fn(usize, usize, usize) -> f64) -> GridSequence {
        let radar = Tensor::from_fn(&[frames, h, h], |i| {
            let (t, rem) = (i / (h * h), i % (h * h));
            fill(t, rem / h, rem % h)
        });
        let sat_frames = frames.div_ceil(2);
        GridSequence::new(
            (0..frames).map(|t| 6.0 * t as f64).collect(),
            radar,
            (0..sat_frames).map(|s| 12.0 * s as f64).collect(),
            Tensor::zeros(&[sat_frames, 13, h / 2, h / 2]),
        )
        .unwrap()
    }

    #[test]
    fn labels_follow_the_horizon_rule() {
        let hot = sequence(12, 4, |_, _, _| 40.0);
        assert_eq!(label_pixel(&hot, 4, 1, 1, LabelRule::AnyFrame), Some(1));
        let cold = sequence(12, 4, |_, _, _| 0.0);
        assert_eq!(label_pixel(&cold, 4, 1, 1, LabelRule::AnyFrame), Some(0));
        // crosses 35 dBZ only at t + 18 min (frame 7 when t = 4)
        let blip = sequence(12, 4, |t, _, _| if t == 7 { 36.0 } else { 10.0 });
        assert_eq!(label_pixel(&blip, 4, 2, 2, LabelRule::AnyFrame), Some(1));
        assert_eq!(label_pixel(&blip, 4, 2, 2, LabelRule::Sustained), Some(0));
        assert_eq!(label_pixel(&hot, 4, 2, 2, LabelRule::Sustained), Some(1));
        // hot only at t itself does not count
        let past = sequence(12, 4, |t, _, _| if t == 4 { 50.0 } else { 0.0 });
        assert_eq!(label_pixel(&past, 4, 0, 0, LabelRule::AnyFrame), Some(0));
        // frame 11 has no frame 30 min ahead
        assert_eq!(label_pixel(&hot, 7, 1, 1, LabelRule::AnyFrame), None);
        assert_eq!(label_pixel(&hot, 6, 1, 1, LabelRule::AnyFrame), Some(1));
    }

    #[test]
    fn horizon_frames_cover_thirty_minutes() {
        let s = sequence(12, 4, |_, _, _| 0.0);
        assert_eq!(s.horizon_frames(2), Some(vec![3, 4, 5, 6, 7]));
        assert_eq!(s.regression_frame(2), Some(7));
    }

    #[test]
    fn uniform_field_gives_uniform_patches() {
        let s = sequence(8, 64, |_, _, _| 12.5);
        let (r, sat) = extract_patches(&s, 4, 30, 31).unwrap();
        assert_eq!(r.shape(), &[1, 5, 54, 54]);
        assert_eq!(sat.shape(), &[13, 3, 27, 27]);
        assert!(r.data().iter().all(|&v| v == 12.5));
        assert!(sat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_lands_on_patch_center() {
        let s = sequence(8, 64, |t, r, c| if (t, r, c) == (5, 33, 35) { 77.0 } else { 0.0 });
        let (r, _) = extract_patches(&s, 5, 33, 35).unwrap();
        let idx = crate::tensor::flat_index(r.shape(), &[0, 4, 27, 27]);
        assert_eq!(r.data()[idx], 77.0);
        assert_eq!(r.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn out_of_bounds_windows_are_skipped() {
        let s = sequence(8, 64, |_, _, _| 0.0);
        assert!(extract_patches(&s, 4, 26, 30).is_none());
        assert!(extract_patches(&s, 4, 38, 30).is_none());
        assert!(extract_patches(&s, 4, 37, 30).is_some());
        assert!(extract_patches(&s, 3, 30, 30).is_none());
    }

    #[test]
    fn channel_order_is_enforced() {
        let grids: Vec<Tensor> = (0..13).map(|k| Tensor::full(&[2, 3], k as f64 + 1.0)).collect();
        let named: Vec<(&str, &Tensor)> = SATELLITE_CHANNELS.iter().copied().zip(&grids).collect();
        let stacked = stack_satellite_channels(&named).unwrap();
        assert_eq!(stacked.shape(), &[13, 2, 3]);
        for k in 0..13 {
            assert!(stacked.data()[k * 6..(k + 1) * 6].iter().all(|&v| v == k as f64 + 1.0));
        }
        let mut swapped = named.clone();
        swapped.swap(0, 1);
        assert!(stack_satellite_channels(&swapped).is_err());
        assert!(stack_satellite_channels(&named[..12]).is_err());
    }

    #[test]
    fn invalid_sequences_are_rejected() {
        let bad_dbz = GridSequence::new(
            vec![0.0],
            Tensor::full(&[1, 2, 2], 90.0),
            vec![0.0],
            Tensor::zeros(&[1, 13, 1, 1]),
        );
        assert!(bad_dbz.is_err());
        let bad_res = GridSequence::new(
            vec![0.0],
            Tensor::zeros(&[1, 4, 4]),
            vec![0.0],
            Tensor::zeros(&[1, 13, 4, 4]),
        );
        assert!(bad_res.is_err());
    }
}
