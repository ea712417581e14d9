//! On-disk grid sequences: one TSMT file for the radar frames, one for the
//! satellite frames, and a JSON sidecar with timestamps and channel names.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sequence::{GridSequence, SATELLITE_CHANNELS};
use super::tensor_file::{load_tensor, save_tensor, Precision};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

#[derive(Debug, Serialize, Deserialize)]
struct SequenceMeta {
    radar_file: String,
    satellite_file: String,
    radar_times: Vec<f64>,
    satellite_times: Vec<f64>,
    satellite_channels: Vec<String>,
}

/// Writes `{name}.radar.tsmt`, `{name}.satellite.tsmt` and `{name}.seq.json`
/// into `dir`; returns the sidecar path.
pub fn save_sequence(dir: &Path, name: &str, seq: &GridSequence) -> Result<PathBuf> {
    let meta = SequenceMeta {
        radar_file: format!("{name}.radar.tsmt"),
        satellite_file: format!("{name}.satellite.tsmt"),
        radar_times: seq.radar_times().to_vec(),
        satellite_times: seq.satellite_times().to_vec(),
        satellite_channels: SATELLITE_CHANNELS.iter().map(|s| s.to_string()).collect(),
    };
    save_tensor(&dir.join(&meta.radar_file), seq.radar(), Precision::F32)?;
    save_tensor(&dir.join(&meta.satellite_file), seq.satellite(), Precision::F32)?;
    let path = dir.join(format!("{name}{SIDECAR_SUFFIX}"));
    write_atomic(&path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(path)
}

pub fn load_sequence(sidecar: &Path) -> Result<GridSequence> {
    let text = std::fs::read_to_string(sidecar)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", sidecar.display())))?;
    let meta: SequenceMeta = serde_json::from_str(&text)?;
    if meta.satellite_channels != SATELLITE_CHANNELS {
        return Err(Error::Data(format!(
            "{} lists satellite channels {:?}; expected {:?}",
            sidecar.display(),
            meta.satellite_channels,
            SATELLITE_CHANNELS
        )));
    }
    let dir = sidecar.parent().unwrap_or(Path::new(""));
    GridSequence::new(
        meta.radar_times,
        load_tensor(&dir.join(&meta.radar_file))?,
        meta.satellite_times,
        load_tensor(&dir.join(&meta.satellite_file))?,
    )
}

/// File-name suffix of sequence sidecars; other JSON files in a sequence
/// directory are ignored.
pub const SIDECAR_SUFFIX: &str = ".seq.json";

/// Every sequence sidecar in `dir`, in file-name order.

pub fn load_sequences_in(dir: &Path) -> Result<Vec<GridSequence>> {
    let mut sidecars: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(SIDECAR_SUFFIX)))
        .collect();
    sidecars.sort();
    if sidecars.is_empty() {
        return Err(Error::Data(format!("no sequence sidecars found in {}", dir.display())));
    }
    sidecars.iter().map(|p| load_sequence(p)).collect()
}
