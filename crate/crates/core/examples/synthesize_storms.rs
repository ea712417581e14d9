//! Generates a few synthetic storm days and writes them as TSMT sequence files.
//!
//! ```text
//! cargo run --release --example synthesize_storms -- /tmp/storms
//! ```

use std::path::PathBuf;

use tsmt::data::synth::CellSource;
use tsmt::data::{load_sequences_in, save_sequence, synth_days, SyntheticStormConfig, STORM_DBZ};

fn main() -> tsmt::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("tsmt-storms"));
    let config = SyntheticStormConfig { seed: 7, ..Default::default() };
    if let CellSource::Random(cells) = &config.cells {
        println!("{} cells per day, peak {:?} dBZ, width {:?} px", cells.count, cells.amplitude, cells.sigma);
    }

    let days = synth_days(&config, 3)?;
    for (d, seq) in days.iter().enumerate() {
        let radar = seq.radar().data();
        let stormy = radar.iter().filter(|&&v| v >= STORM_DBZ).count() as f64 / radar.len() as f64;
        let peak = radar.iter().copied().fold(0.0, f64::max);
        println!(
            "day {d}: {} radar frames {}x{}, {} satellite frames, peak {peak:.1} dBZ, {:.1}% of pixels stormy",
            seq.radar_len(),
            seq.height(),
            seq.width(),
            seq.satellite_times().len(),
            100.0 * stormy
        );
        save_sequence(&out, &format!("day{d:03}"), seq)?;
    }

    // the files reload to the same grids
    let reloaded = load_sequences_in(&out)?;
    assert_eq!(reloaded.len(), days.len());
    assert_eq!(reloaded[0].radar(), days[0].radar());
    println!("wrote {}", out.display());
    Ok(())
}
