//! Sample construction: sequences, labels, patches, normalization,
//! rebalancing, synthetic storms and persisted datasets.

mod dataset;
mod normalize;
mod rebalance;
mod sequence;
mod store;
pub mod synth;
pub mod tensor_file;

pub use dataset::{
    build_dataset, Batch, ClassCounts, Dataset, FoldSplit, ManifestHeader, Normalization, RawSample,
    SampleEntry, SamplingConfig, SkipStats, MANIFEST_FILE,
};
pub use normalize::{denormalize, normalize, Range};
pub use rebalance::{rebalance, BalanceMode};
pub use sequence::{
    extract_patches, label_pixel, regression_label, sample_fits, stack_satellite_channels, window_origin, GridSequence,
    LabelRule, HORIZON_MINUTES, MAX_DBZ, NUM_SATELLITE_CHANNELS, RADAR_HISTORY, RADAR_PATCH,
    REGRESSION_PATCH, SATELLITE_CHANNELS, SATELLITE_HISTORY, SATELLITE_PATCH, STORM_DBZ,
};
pub use store::{load_sequence, load_sequences_in, save_sequence};
pub use synth::{synth_days, synth_generate, SyntheticStormConfig, DEFAULT_DAYS};
