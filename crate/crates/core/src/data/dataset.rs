//! Pixel-wise sample sets: grid sampling over sequences, day-wise folds,
//! per-split rebalancing and normalization, the JSON-lines manifest and
//! minibatch assembly.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::normalize::Range;
use super::rebalance::{rebalance, BalanceMode};
use super::sequence::{
    extract_patches, label_pixel, regression_label, sample_fits, GridSequence, LabelRule, NUM_SATELLITE_CHANNELS,
    RADAR_HISTORY, RADAR_PATCH, REGRESSION_PATCH, SATELLITE_CHANNELS, SATELLITE_HISTORY,
    SATELLITE_PATCH,
};
use super::tensor_file::{encode_tensor, read_all, Precision};
use crate::error::{config_err, Error, Result};
use crate::fsutil::write_atomic;
use crate::rng::{substream, substream_seed};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Pixel spacing of the sample-center grid.
    pub stride: usize,
    pub folds: usize,
    pub positive_fraction: f64,
    pub balance_mode: BalanceMode,
    pub label_rule: LabelRule,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            stride: 6,
            folds: 4,
            positive_fraction: 0.5,
            balance_mode: BalanceMode::Oversample,
            label_rule: LabelRule::AnyFrame,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return config_err("stride must be at least 1");
        }
        if self.folds < 2 {
            return config_err("cross-validation needs at least 2 folds");
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return config_err("positive fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Candidate centers dropped during sampling, by reason.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipStats {
    /// Fewer than five radar frames (or three satellite frames) of history.
    pub history: usize,
    /// Sequence ends before `t + 30 min`.
    pub horizon: usize,
    /// Patch window leaves the grid.
    pub bounds: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positives: usize,
    pub negatives: usize,
    pub positive_fraction: f64,
}

impl ClassCounts {
    pub fn from_labels(labels: impl IntoIterator<Item = u8>) -> Self {
        let (mut p, mut n) = (0, 0);
        for l in labels {
            if l == 1 {
                p += 1;
            } else {
                n += 1;
            }
        }
        let total = p + n;
        Self {
            positives: p,
            negatives: n,
            positive_fraction: if total == 0 { 0.0 } else { p as f64 / total as f64 },
        }
    }

    pub fn total(&self) -> usize {
        self.positives + self.negatives
    }
}

/// Per-variable scaling constants: radar reflectivity and each satellite channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub radar: Range,
    pub satellite: Vec<Range>,
}

impl Normalization {
    /// Tight per-variable ranges over every frame and pixel of `sequences`.
    pub fn from_sequences<'a>(sequences: impl IntoIterator<Item = &'a GridSequence> + Clone) -> Result<Self> {
        let radar = Range::of(
            sequences
                .clone()
                .into_iter()
                .flat_map(|s| s.radar().data().iter().copied()),
        )?;
        let mut satellite = Vec::with_capacity(NUM_SATELLITE_CHANNELS);
        for ch in 0..NUM_SATELLITE_CHANNELS {
            satellite.push(Range::of(sequences.clone().into_iter().flat_map(|s| {
                let shape = s.satellite().shape();
                let plane = shape[2] * shape[3];
                (0..shape[0]).flat_map(move |k| {
                    let start = (k * NUM_SATELLITE_CHANNELS + ch) * plane;
                    s.satellite().data()[start..start + plane].iter().copied()
                })
            }))?);
        }
        Ok(Self { radar, satellite })
    }

    pub fn radar_in_place(&self, values: &mut [f64]) {
        for v in values {
            *v = self.radar.apply(*v);
        }
    }

    /// Scales a `[13, frames, h, w]` satellite block channel by channel.
    pub fn satellite_in_place(&self, values: &mut [f64]) {
        let per_channel = values.len() / NUM_SATELLITE_CHANNELS;
        for (ch, chunk) in values.chunks_mut(per_channel).enumerate() {
            for v in chunk {
                *v = self.satellite[ch].apply(*v);
            }
        }
    }
}

/// One held-out fold: constants from the training folds, class counts, and
/// the rebalanced multiset of training sample indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub held_out: usize,
    pub normalization: Normalization,
    pub train_raw: ClassCounts,
    pub train_balanced: ClassCounts,
    pub test: ClassCounts,
    pub train_samples: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub seed: u64,
    pub sampling: SamplingConfig,
    pub satellite_channels: Vec<String>,
    pub sequences: usize,
    pub samples: usize,
    pub skipped: SkipStats,
    /// Raw positive fraction over all samples.
    pub positive_fraction: f64,
    pub fold_counts: Vec<ClassCounts>,
    pub splits: Vec<FoldSplit>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub path: String,
    pub cls_label: u8,
    pub fold_id: usize,
    /// `[frame, row, col]` in the source sequence.
    pub center: [usize; 3],
    pub sequence: usize,
}

/// Patches and targets of one sample in raw units (dBZ, albedo, kelvin).
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub radar: Tensor,
    pub satellite: Tensor,
    pub reg_label: Tensor,
}

#[derive(Clone, Debug)]
enum Storage {
    Sequences(Vec<GridSequence>),
    Files(PathBuf),
}

/// A sample index plus access to the patches, either extracted on demand
/// from in-memory sequences or read from sample files.
#[derive(Clone, Debug)]
pub struct Dataset {
    header: ManifestHeader,
    entries: Vec<SampleEntry>,
    storage: Storage,
    /// Sample `i` takes its targets from sample `label_source[i]`.
    label_source: Option<Vec<usize>>,
}

/// Normalized model inputs and targets for a minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub radar: Tensor,
    pub satellite: Tensor,
    pub cls_labels: Vec<f64>,
    /// `[B, 1, 48, 48]`, normalized with the radar constants.
    pub reg_labels: Tensor,
    /// `[B, 48, 48]` in dBZ.
    pub reg_labels_dbz: Tensor,
}

fn sample_path(i: usize) -> String {
    format!("samples/{i:06}.tsmt")
}

fn split_for(
    held_out: usize,
    entries: &[SampleEntry],
    sequences: Option<&[GridSequence]>,
    normalization: Option<Normalization>,
    sampling: &SamplingConfig,
) -> Result<FoldSplit> {
    let train: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].fold_id != held_out).collect();
    let train_labels: Vec<u8> = train.iter().map(|&i| entries[i].cls_label).collect();
    let balanced = rebalance(
        &train_labels,
        sampling.positive_fraction,
        sampling.balance_mode,
        substream_seed(sampling.seed, "rebalance.fold", held_out as u64),
    )
    .map_err(|e| Error::Data(format!("training folds for held-out fold {held_out}: {e}")))?;
    let train_samples: Vec<usize> = balanced.iter().map(|&k| train[k]).collect();
    let normalization = match (normalization, sequences) {
        (Some(n), _) => n,
        (None, Some(seqs)) => {
            let folds = sampling.folds;
            Normalization::from_sequences(
                seqs.iter().enumerate().filter(|(s, _)| s % folds != held_out).map(|(_, s)| s),
            )?
        }
        (None, None) => return config_err("normalization constants unavailable"),
    };
    Ok(FoldSplit {
        held_out,
        normalization,
        train_raw: ClassCounts::from_labels(train_labels.iter().copied()),
        train_balanced: ClassCounts::from_labels(train_samples.iter().map(|&i| entries[i].cls_label)),
        test: ClassCounts::from_labels(
            entries.iter().filter(|e| e.fold_id == held_out).map(|e| e.cls_label),
        ),
        train_samples,
    })
}

/// Samples every sequence on a `stride`-spaced pixel grid at every frame,
/// assigns sequence `s` to fold `s % folds`, and prepares one rebalanced,
/// normalized split per held-out fold.
pub fn build_dataset(sequences: Vec<GridSequence>, sampling: &SamplingConfig) -> Result<Dataset> {
    sampling.validate()?;
    if sequences.len() < sampling.folds {
        return config_err(format!(
            "{} sequences cannot fill {} day-wise folds",
            sequences.len(),
            sampling.folds
        ));
    }
    let mut skipped = SkipStats::default();
    let mut entries = Vec::new();
    let first = RADAR_PATCH / 2;
    for (s, seq) in sequences.iter().enumerate() {
        for t in 0..seq.radar_len() {
            for r in (first..seq.height()).step_by(sampling.stride) {
                for c in (first..seq.width()).step_by(sampling.stride) {
                    let Some(label) = label_pixel(seq, t, r, c, sampling.label_rule) else {
                        skipped.horizon += 1;
                        continue;
                    };
                    if t + 1 < RADAR_HISTORY || seq.satellite_index_for(t) + 1 < SATELLITE_HISTORY {
                        skipped.history += 1;
                        continue;
                    }
                    if !sample_fits(seq, t, r, c) {
                        skipped.bounds += 1;
                        continue;
                    }
                    entries.push(SampleEntry {
                        path: sample_path(entries.len()),
                        cls_label: label,
                        fold_id: s % sampling.folds,
                        center: [t, r, c],
                        sequence: s,
                    });
                }
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Data("no sample centers survived history, horizon and bounds checks".into()));
    }
    let splits = (0..sampling.folds)
        .map(|k| split_for(k, &entries, Some(&sequences), None, sampling))
        .collect::<Result<Vec<_>>>()?;
    let header = ManifestHeader {
        seed: sampling.seed,
        sampling: sampling.clone(),
        satellite_channels: SATELLITE_CHANNELS.iter().map(|s| s.to_string()).collect(),
        sequences: sequences.len(),
        samples: entries.len(),
        skipped,
        positive_fraction: ClassCounts::from_labels(entries.iter().map(|e| e.cls_label)).positive_fraction,
        fold_counts: (0..sampling.folds)
            .map(|k| ClassCounts::from_labels(entries.iter().filter(|e| e.fold_id == k).map(|e| e.cls_label)))
            .collect(),
        splits,
    };
    Ok(Dataset {
        header,
        entries,
        storage: Storage::Sequences(sequences),
        label_source: None,
    })
}

impl Dataset {
    pub fn header(&self) -> &ManifestHeader {
        &self.header
    }

    pub fn entries(&self) -> &[SampleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn folds(&self) -> usize {
        self.header.sampling.folds
    }

    pub fn split(&self, held_out: usize) -> Result<&FoldSplit> {
        self.header
            .splits
            .get(held_out)
            .ok_or_else(|| Error::Config(format!("fold {held_out} out of range (folds = {})", self.folds())))
    }

    fn target_index(&self, i: usize) -> usize {
        self.label_source.as_ref().map_or(i, |m| m[i])
    }

    pub fn label(&self, i: usize) -> u8 {
        self.entries[i].cls_label
    }

    /// Indices of the samples in fold `fold`, in manifest order.
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.entries[i].fold_id == fold).collect()
    }

    fn load_inputs(&self, i: usize) -> Result<(Tensor, Tensor, Tensor)> {
        let e = &self.entries[i];
        match &self.storage {
            Storage::Sequences(seqs) => {
                let seq = &seqs[e.sequence];
                let [t, r, c] = e.center;
                let (radar, sat) = extract_patches(seq, t, r, c)
                    .ok_or_else(|| Error::Data(format!("sample {i} no longer fits its sequence")))?;
                let reg = regression_label(seq, t, r, c)
                    .ok_or_else(|| Error::Data(format!("sample {i} lacks a regression frame")))?;
                Ok((radar, sat, reg))
            }
            Storage::Files(dir) => {
                let bytes = fs::read(dir.join(&e.path))?;
                let mut records = read_all(&bytes)?;
                if records.len() != 3 {
                    return Err(Error::Format(format!("{} holds {} records, expected 3", e.path, records.len())));
                }
                let reg = records.pop().expect("three records");
                let sat = records.pop().expect("three records");
                let radar = records.pop().expect("three records");
                check_shape(&radar, &[1, RADAR_HISTORY, RADAR_PATCH, RADAR_PATCH], &e.path)?;
                check_shape(
                    &sat,
                    &[NUM_SATELLITE_CHANNELS, SATELLITE_HISTORY, SATELLITE_PATCH, SATELLITE_PATCH],
                    &e.path,
                )?;
                check_shape(&reg, &[REGRESSION_PATCH, REGRESSION_PATCH], &e.path)?;
                Ok((radar, sat, reg))
            }
        }
    }

    /// Raw patches of sample `i` with its (possibly permuted) regression target.
    pub fn load(&self, i: usize) -> Result<RawSample> {
        let (radar, satellite, mut reg_label) = self.load_inputs(i)?;
        let src = self.target_index(i);
        if src != i {
            reg_label = self.load_inputs(src)?.2;
        }
        Ok(RawSample {
            radar,
            satellite,
            reg_label,
        })
    }

    /// Normalized minibatch of the given samples.
    pub fn batch(&self, indices: &[usize], norm: &Normalization) -> Result<Batch> {
        if indices.is_empty() {
            return config_err("empty minibatch");
        }
        let b = indices.len();
        let mut radar = Vec::with_capacity(b * RADAR_HISTORY * RADAR_PATCH * RADAR_PATCH);
        let mut sat = Vec::with_capacity(b * NUM_SATELLITE_CHANNELS * SATELLITE_HISTORY * SATELLITE_PATCH.pow(2));
        let mut reg = Vec::with_capacity(b * REGRESSION_PATCH * REGRESSION_PATCH);
        let mut reg_dbz = Vec::with_capacity(b * REGRESSION_PATCH * REGRESSION_PATCH);
        let mut cls = Vec::with_capacity(b);
        for &i in indices {
            let s = self.load(i)?;
            let mut r = s.radar.into_data();
            norm.radar_in_place(&mut r);
            radar.extend(r);
            let mut p = s.satellite.into_data();
            norm.satellite_in_place(&mut p);
            sat.extend(p);
            reg_dbz.extend_from_slice(s.reg_label.data());
            reg.extend(s.reg_label.data().iter().map(|&v| norm.radar.apply(v)));
            cls.push(f64::from(self.label(i)));
        }
        Ok(Batch {
            radar: Tensor::new(vec![b, 1, RADAR_HISTORY, RADAR_PATCH, RADAR_PATCH], radar)?,
            satellite: Tensor::new(
                vec![b, NUM_SATELLITE_CHANNELS, SATELLITE_HISTORY, SATELLITE_PATCH, SATELLITE_PATCH],
                sat,
            )?,
            cls_labels: cls,
            reg_labels: Tensor::new(vec![b, 1, REGRESSION_PATCH, REGRESSION_PATCH], reg)?,
            reg_labels_dbz: Tensor::new(vec![b, REGRESSION_PATCH, REGRESSION_PATCH], reg_dbz)?,
        })
    }

    /// Copy in which the targets of samples outside `held_out` are randomly
    /// permuted among themselves and that fold's training split is
    /// rebalanced for the new labels. Test samples keep their own targets.
    pub fn with_shuffled_training_labels(&self, held_out: usize, seed: u64) -> Result<Dataset> {
        self.split(held_out)?;
        let train: Vec<usize> = (0..self.len()).filter(|&i| self.entries[i].fold_id != held_out).collect();
        let mut shuffled = train.clone();
        shuffled.shuffle(&mut substream(seed, "label-shuffle", held_out as u64));
        let mut source: Vec<usize> = (0..self.len()).map(|i| self.target_index(i)).collect();
        let mut entries = self.entries.clone();
        for (&dst, &src) in train.iter().zip(&shuffled) {
            source[dst] = self.target_index(src);
            entries[dst].cls_label = self.entries[src].cls_label;
        }
        let mut header = self.header.clone();
        let norm = header.splits[held_out].normalization.clone();
        header.splits[held_out] = split_for(held_out, &entries, None, Some(norm), &header.sampling)?;
        Ok(Dataset {
            header,
            entries,
            storage: self.storage.clone(),
            label_source: Some(source),
        })
    }

    /// Writes `manifest.jsonl` and one sample file per entry under `dir`;
    /// returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        if self.label_source.is_some() {
            return config_err("label-permuted datasets are not persisted");
        }
        for i in 0..self.len() {
            let s = self.load(i)?;
            let mut bytes = encode_tensor(&s.radar, Precision::F32);
            bytes.extend(encode_tensor(&s.satellite, Precision::F32));
            bytes.extend(encode_tensor(&s.reg_label, Precision::F32));
            write_atomic(&dir.join(&self.entries[i].path), &bytes)?;
        }
        let mut text = serde_json::to_string(&self.header)?;
        text.push('\n');
        for e in &self.entries {
            text.push_str(&serde_json::to_string(e)?);
            text.push('\n');
        }
        let path = dir.join(MANIFEST_FILE);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Opens a manifest written by [`Dataset::write`]; sample files are read on demand.
    pub fn open(manifest: &Path) -> Result<Dataset> {
        let file = fs::File::open(manifest)
            .map_err(|e| Error::Data(format!("cannot open manifest {}: {e}", manifest.display())))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{} is empty", manifest.display())))??;
        let header: ManifestHeader = serde_json::from_str(&header_line)?;
        let mut entries = Vec::with_capacity(header.samples);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: SampleEntry = serde_json::from_str(&line)?;
            if e.fold_id >= header.sampling.folds {
                return Err(Error::Format(format!("sample {} has fold {} out of range", e.path, e.fold_id)));
            }
            entries.push(e);
        }
        if entries.len() != header.samples {
            return Err(Error::Format(format!(
                "manifest lists {} samples but its header declares {}",
                entries.len(),
                header.samples
            )));
        }
        let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Dataset {
            header,
            entries,
            storage: Storage::Files(dir),
            label_source: None,
        })
    }
}

fn check_shape(t: &Tensor, expected: &[usize], path: &str) -> Result<()> {
    if t.shape() != expected {
        return Err(Error::Format(format!("{path}: record shape {:?}, expected {expected:?}", t.shape())));
    }
    Ok(())
}
