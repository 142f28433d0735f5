use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chronological train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be in [0, 1] and sum to 1, got {}/{}/{}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// Partition sizes for `n` records. The train and train+val boundaries
    /// are rounded to the nearest record (halves away from zero); the test
    /// split takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let n_train = (n as f64 * self.train).round() as usize;
        let n_head = ((n as f64 * (self.train + self.val)).round() as usize).clamp(n_train, n);
        (n_train, n_head - n_train, n - n_head)
    }
}

/// Splits time-ordered records into contiguous train/val/test slices.
pub fn chronological_split<'a, T>(records: &'a [T], spec: &SplitSpec) -> Result<(&'a [T], &'a [T], &'a [T])> {
    spec.validate()?;
    let (n_train, n_val, n_test) = spec.sizes(records.len());
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Usage(format!(
            "{} records cannot be split {}/{}/{} into non-empty partitions",
            records.len(),
            spec.train,
            spec.val,
            spec.test
        )));
    }
    let (train, rest) = records.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_records_split_seventy_fifteen_fifteen() {
        let xs: Vec<usize> = (0..100).collect();
        let (a, b, c) = chronological_split(&xs, &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 15, 15));
        assert!(a.last() < b.first() && b.last() < c.first());
    }

    #[test]
    fn ten_records_round_to_seven_plus_three() {
        let xs: Vec<usize> = (0..10).collect();
        let (a, b, c) = chronological_split(&xs, &SplitSpec::default()).unwrap();
        assert_eq!(a.len(), 7);
        assert_eq!(b.len() + c.len(), 3);
        assert!(b.len().abs_diff(c.len()) == 1);
    }

    #[test]
    fn too_few_records_is_usage_error() {
        let xs = [1, 2];
        assert!(matches!(chronological_split(&xs, &SplitSpec::default()), Err(Error::Usage(_))));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let bad = SplitSpec {
            train: 0.8,
            val: 0.15,
            test: 0.15,
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sizes_stay_within_one_record_of_fractions() {
        let spec = SplitSpec::default();
        for n in 3..500 {
            let (a, b, c) = spec.sizes(n);
            assert_eq!(a + b + c, n);
            for (got, frac) in [(a, spec.train), (b, spec.val), (c, spec.test)] {
                assert!((got as f64 - n as f64 * frac).abs() <= 1.0, "n={n}");
            }
        }
    }
}
