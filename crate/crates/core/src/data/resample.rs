use super::record::TelemetryRecord;
use crate::error::{Error, Result};

pub const MINUTE: i64 = 60;

/// Longest run of missing minutes that is forward-filled; longer gaps split
/// the series.
pub const DEFAULT_MAX_GAP_MINUTES: usize = 5;

/// Aggregates sorted records into one record per minute bucket.
///
/// Power, utilizations and temperature are averaged, `job_switch` is OR-ed,
/// `job_count` and `gpu_count` keep the bucket's last value. Up to
/// `max_gap` missing minutes are forward-filled (with `job_switch = 0`,
/// since a switch is an event, not a level); a longer gap starts a new
/// series. Each returned series is gap-free at one-minute spacing.
pub fn resample_1min(records: &[TelemetryRecord], max_gap: usize) -> Result<Vec<Vec<TelemetryRecord>>> {
    if let Some(i) = records.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Usage(format!(
            "records not sorted by timestamp at index {} ({} after {})",
            i + 1,
            records[i + 1].timestamp,
            records[i].timestamp
        )));
    }

    let mut series: Vec<Vec<TelemetryRecord>> = Vec::new();
    let mut current: Vec<TelemetryRecord> = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let bucket = records[start].timestamp.div_euclid(MINUTE) * MINUTE;
        let mut end = start + 1;
        while end < records.len() && records[end].timestamp.div_euclid(MINUTE) * MINUTE == bucket {
            end += 1;
        }
        let agg = aggregate(bucket, &records[start..end]);
        start = end;

        if let Some(prev) = current.last() {
            let missing = ((agg.timestamp - prev.timestamp) / MINUTE - 1) as usize;
            if missing > max_gap {
                series.push(std::mem::take(&mut current));
            } else {
                let mut fill = prev.clone();
                fill.job_switch = 0;
                for _ in 0..missing {
                    fill.timestamp += MINUTE;
                    current.push(fill.clone());
                }
            }
        }
        current.push(agg);
    }
    if !current.is_empty() {
        series.push(current);
    }
    Ok(series)
}

fn aggregate(bucket: i64, group: &[TelemetryRecord]) -> TelemetryRecord {
    let n = group.len() as f64;
    let mean = |f: fn(&TelemetryRecord) -> f64| group.iter().map(f).sum::<f64>() / n;
    let last = group.last().expect("non-empty bucket");
    TelemetryRecord {
        timestamp: bucket,
        power: mean(|r| r.power),
        gpu_util: mean(|r| r.gpu_util),
        mem_util: mean(|r| r.mem_util),
        temperature: mean(|r| r.temperature),
        job_count: last.job_count,
        job_switch: group.iter().any(|r| r.job_switch != 0) as u8,
        gpu_count: last.gpu_count,
    }
}
