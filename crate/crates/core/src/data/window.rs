use super::record::{CHANNELS, FEATURE_CHANNELS};
use super::resample::MINUTE;

/// A gap-free, normalized, one-minute series.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub timestamps: Vec<i64>,
    pub load: Vec<f32>,
    /// Row-major `[len, feature_dim]`.
    pub features: Vec<f32>,
    pub feature_dim: usize,
}

impl Frame {
    /// Builds a frame from normalized channel rows, optionally appending a
    /// sin/cos minute-of-day pair to the features.
    pub fn from_channels(timestamps: Vec<i64>, rows: &[[f64; CHANNELS]], time_encoding: bool) -> Self {
        debug_assert_eq!(timestamps.len(), rows.len());
        let feature_dim = FEATURE_CHANNELS + if time_encoding { 2 } else { 0 };
        let mut load = Vec::with_capacity(rows.len());
        let mut features = Vec::with_capacity(rows.len() * feature_dim);
        for (row, &ts) in rows.iter().zip(&timestamps) {
            load.push(row[0] as f32);
            features.extend(row[1..].iter().map(|&v| v as f32));
            if time_encoding {
                let minute = ts.rem_euclid(86_400) as f64 / 60.0;
                let phase = std::f64::consts::TAU * minute / 1440.0;
                features.push(phase.sin() as f32);
                features.push(phase.cos() as f32);
            }
        }
        Self {
            timestamps,
            load,
            features,
            feature_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    pub fn features_at(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Splits at every timestamp discontinuity into one-minute runs.
    pub fn contiguous_runs(self) -> Vec<Frame> {
        let mut cuts = vec![0];
        cuts.extend((1..self.len()).filter(|&i| self.timestamps[i] - self.timestamps[i - 1] != MINUTE));
        cuts.push(self.len());
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| Frame {
                timestamps: self.timestamps[w[0]..w[1]].to_vec(),
                load: self.load[w[0]..w[1]].to_vec(),
                features: self.features[w[0] * self.feature_dim..w[1] * self.feature_dim].to_vec(),
                feature_dim: self.feature_dim,
            })
            .collect()
    }
}

/// One supervised sample: `L` steps of history ending at the anchor, and the
/// `H` loads that follow it. All values are normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// Timestamp of the anchor (last history step).
    pub anchor_time: i64,
    pub history_load: Vec<f32>,
    /// Row-major `[L, feature_dim]`.
    pub history_feat: Vec<f32>,
    pub feature_dim: usize,
    /// Always equal to the last element of `history_load`.
    pub anchor: f32,
    pub future_load: Vec<f32>,
}

impl Window {
    pub fn history_len(&self) -> usize {
        self.history_load.len()
    }

    pub fn horizon(&self) -> usize {
        self.future_load.len()
    }

    /// Features observed at the anchor step.
    pub fn anchor_features(&self) -> &[f32] {
        let l = self.history_len();
        &self.history_feat[(l - 1) * self.feature_dim..]
    }

    /// Point-wise input `[P_t; x_t]`.
    pub fn point_input(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(1 + self.feature_dim);
        v.push(self.anchor);
        v.extend_from_slice(self.anchor_features());
        v
    }
}

/// Sliding windows over a contiguous frame at the given stride, in time
/// order. Anchors run from index `L−1` to `len−H−1`; a frame shorter than
/// `L+H` yields nothing.
pub fn make_windows(frame: &Frame, history: usize, horizon: usize, stride: usize) -> Vec<Window> {
    assert!(history >= 1 && horizon >= 1 && stride >= 1, "window sizes must be positive");
    let n = frame.len();
    if n < history + horizon {
        return Vec::new();
    }
    let d = frame.feature_dim;
    (history - 1..n - horizon)
        .step_by(stride)
        .map(|t| {
            let start = t + 1 - history;
            Window {
                anchor_time: frame.timestamps[t],
                history_load: frame.load[start..=t].to_vec(),
                history_feat: frame.features[start * d..(t + 1) * d].to_vec(),
                feature_dim: d,
                anchor: frame.load[t],
                future_load: frame.load[t + 1..t + 1 + horizon].to_vec(),
            }
        })
        .collect()
}

/// Windows over several frames, concatenated in frame order.
pub fn windows_over(frames: &[Frame], history: usize, horizon: usize, stride: usize) -> Vec<Window> {
    frames.iter().flat_map(|f| make_windows(f, history, horizon, stride)).collect()
}
