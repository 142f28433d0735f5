//! Telemetry ingestion, resampling, normalization, chronological splitting
//! and windowing.

mod record;
mod resample;
mod scaler;
mod split;
mod window;

pub use record::{read_csv, read_csv_from, write_csv, write_csv_to, TelemetryRecord, CHANNELS, CSV_HEADER, FEATURE_CHANNELS};
pub use resample::{resample_1min, DEFAULT_MAX_GAP_MINUTES, MINUTE};
pub use scaler::Scaler;
pub use split::{chronological_split, SplitSpec};
pub use window::{make_windows, windows_over, Frame, Window};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub split: SplitSpec,
    pub max_gap_minutes: usize,
    pub time_encoding: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            max_gap_minutes: DEFAULT_MAX_GAP_MINUTES,
            time_encoding: false,
        }
    }
}

/// Normalized train/val/test frames plus the train-only scaler.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub scaler: Scaler,
    pub train: Vec<Frame>,
    pub val: Vec<Frame>,
    pub test: Vec<Frame>,
    pub feature_dim: usize,
}

impl PreparedData {
    /// Token width `d_u`: load plus features.
    pub fn input_dim(&self) -> usize {
        self.feature_dim + 1
    }
}

/// Resample → chronological split → fit scaler on train → normalize all.
///
/// Series produced by resampling are concatenated in time order before the
/// split; each split is then cut back into contiguous runs so no window can
/// cross a gap or a split boundary.
pub fn prepare(records: &[TelemetryRecord], opts: &PipelineOptions) -> Result<PreparedData> {
    let series = resample_1min(records, opts.max_gap_minutes)?;
    let all: Vec<TelemetryRecord> = series.into_iter().flatten().collect();
    let (train, val, test) = chronological_split(&all, &opts.split)?;
    let scaler = Scaler::fit(train)?;
    let to_frames = |part: &[TelemetryRecord]| {
        let ts = part.iter().map(|r| r.timestamp).collect();
        Frame::from_channels(ts, &scaler.apply(part), opts.time_encoding).contiguous_runs()
    };
    let (train, val, test) = (to_frames(train), to_frames(val), to_frames(test));
    Ok(PreparedData {
        feature_dim: FEATURE_CHANNELS + if opts.time_encoding { 2 } else { 0 },
        scaler,
        train,
        val,
        test,
    })
}
