use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::record::{TelemetryRecord, CHANNELS};
use crate::error::{Error, Result};

/// Per-channel min–max normalization learned from the training split.
///
/// Channels whose training range is degenerate (`max == min`) map every
/// value to 0. Values outside the training range extrapolate linearly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    min: [f64; CHANNELS],
    max: [f64; CHANNELS],
}

impl Scaler {
    pub fn fit(train: &[TelemetryRecord]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Usage("cannot fit a scaler on an empty training split".into()));
        }
        let mut min = [f64::INFINITY; CHANNELS];
        let mut max = [f64::NEG_INFINITY; CHANNELS];
        for r in train {
            for (c, v) in r.channels().into_iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> &[f64; CHANNELS] {
        &self.min
    }

    pub fn max(&self) -> &[f64; CHANNELS] {
        &self.max
    }

    pub fn is_degenerate(&self, channel: usize) -> bool {
        self.max[channel] <= self.min[channel]
    }

    pub fn transform_value(&self, channel: usize, v: f64) -> f64 {
        if self.is_degenerate(channel) {
            0.0
        } else {
            (v - self.min[channel]) / (self.max[channel] - self.min[channel])
        }
    }

    pub fn inverse_value(&self, channel: usize, v: f64) -> f64 {
        if self.is_degenerate(channel) {
            self.min[channel]
        } else {
            v * (self.max[channel] - self.min[channel]) + self.min[channel]
        }
    }

    pub fn transform(&self, record: &TelemetryRecord) -> [f64; CHANNELS] {
        let mut out = record.channels();
        for (c, v) in out.iter_mut().enumerate() {
            *v = self.transform_value(c, *v);
        }
        out
    }

    /// Normalized channels of every record.
    pub fn apply(&self, records: &[TelemetryRecord]) -> Vec<[f64; CHANNELS]> {
        records.iter().map(|r| self.transform(r)).collect()
    }

    /// Hash of the exact fitted bounds; changes iff any bound changes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in self.min.iter().chain(&self.max) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(power: f64, temp: f64) -> TelemetryRecord {
        TelemetryRecord {
            timestamp: 0,
            power,
            gpu_util: 0.5,
            mem_util: 0.5,
            temperature: temp,
            job_count: 1,
            job_switch: 0,
            gpu_count: 1,
        }
    }

    #[test]
    fn min_max_examples() {
        let s = Scaler::fit(&[rec(2.0, 5.0), rec(4.0, 5.0)]).unwrap();
        assert_eq!(s.min()[0], 2.0);
        assert_eq!(s.max()[0], 4.0);
        assert_eq!(s.transform_value(0, 3.0), 0.5);
        // Out-of-range values extrapolate.
        assert_eq!(s.transform_value(0, 6.0), 2.0);
        // Constant channel maps to zero.
        assert!(s.is_degenerate(3));
        assert_eq!(s.transform_value(3, 5.0), 0.0);
        assert_eq!(s.transform_value(3, 17.0), 0.0);
    }

    #[test]
    fn empty_train_is_an_error() {
        assert!(matches!(Scaler::fit(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn refit_on_wider_data_changes_fingerprint() {
        let train = [rec(2.0, 30.0), rec(4.0, 40.0)];
        let s = Scaler::fit(&train).unwrap();
        let fp = s.fingerprint();
        assert_eq!(Scaler::fit(&train).unwrap().fingerprint(), fp);
        let mut all = train.to_vec();
        all.push(rec(9.0, 35.0));
        assert_ne!(Scaler::fit(&all).unwrap().fingerprint(), fp);
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(lo in -1e3f64..1e3, span in 1e-3f64..1e4, x in -1e4f64..1e4) {
            let s = Scaler::fit(&[rec(lo.abs(), lo), rec(lo.abs() + span, lo + span)]).unwrap();
            for c in [0usize, 3] {
                let back = s.inverse_value(c, s.transform_value(c, x));
                prop_assert!((back - x).abs() <= 1e-6 * x.abs().max(1.0), "{} vs {}", back, x);
            }
        }
    }
}
