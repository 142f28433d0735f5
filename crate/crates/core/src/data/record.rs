use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header of the telemetry CSV, in column order.
pub const CSV_HEADER: [&str; 8] = [
    "timestamp",
    "power",
    "gpu_util",
    "mem_util",
    "temp",
    "job_count",
    "job_switch",
    "gpu_count",
];

/// Number of exogenous feature channels (everything except power).
pub const FEATURE_CHANNELS: usize = 6;

/// Power plus the exogenous features.
pub const CHANNELS: usize = FEATURE_CHANNELS + 1;

/// One telemetry sample of a GPU node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    /// Epoch seconds.
    pub timestamp: i64,
    /// Node power in watts.
    pub power: f64,
    pub gpu_util: f64,
    pub mem_util: f64,
    #[serde(rename = "temp")]
    pub temperature: f64,
    pub job_count: u32,
    pub job_switch: u8,
    pub gpu_count: u32,
}

impl TelemetryRecord {
    /// Channel values in scaler order: power first, then the six features.
    pub fn channels(&self) -> [f64; CHANNELS] {
        [
            self.power,
            self.gpu_util,
            self.mem_util,
            self.temperature,
            self.job_count as f64,
            self.job_switch as f64,
            self.gpu_count as f64,
        ]
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let finite = self.channels().iter().all(|v| v.is_finite());
        if !finite {
            return Err("non-finite value".into());
        }
        if self.power < 0.0 {
            return Err(format!("negative power {}", self.power));
        }
        for (name, v) in [("gpu_util", self.gpu_util), ("mem_util", self.mem_util)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.job_switch > 1 {
            return Err(format!("job_switch must be 0 or 1, got {}", self.job_switch));
        }
        Ok(())
    }
}

/// Parses telemetry CSV. The header must match [`CSV_HEADER`] exactly; the
/// first malformed row aborts with its line number.
pub fn read_csv(path: &Path) -> Result<Vec<TelemetryRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file, path)
}

pub fn read_csv_from<R: Read>(reader: R, path: &Path) -> Result<Vec<TelemetryRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!("expected header `{}`, got `{}`", CSV_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<TelemetryRecord>() {
        let record = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            let message = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                _ => e.to_string(),
            };
            parse_err(line, message)
        })?;
        // Data rows start on line 2.
        let line = out.len() as u64 + 2;
        record.validate().map_err(|m| parse_err(line, m))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_csv(path: &Path, records: &[TelemetryRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(file, records)
}

pub fn write_csv_to<W: Write>(writer: W, records: &[TelemetryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
