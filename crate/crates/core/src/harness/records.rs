//! Metric records and their CSV / JSON-lines persistence.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::common::ErrorCount;
use crate::error::{Error, Result};

/// One aggregated metric at one sweep point.
///
/// Monte-Carlo rates carry their raw `count` / `total` and a binomial
/// standard error; sample means carry the standard error of the mean;
/// analytic references carry neither.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scenario: String,
    pub point: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    pub count: Option<u64>,
    pub total: Option<u64>,
}

impl MetricRecord {
    /// Rate record; `None` for an empty tally.
    pub fn rate(scenario: &str, point: f64, metric: &str, tally: ErrorCount, trials: u64, seed: u64) -> Option<Self> {
        Some(MetricRecord {
            scenario: scenario.into(),
            point,
            metric: metric.into(),
            value: tally.rate()?,
            stderr: tally.std_error(),
            trials,
            seed,
            count: Some(tally.errors),
            total: Some(tally.total),
        })
    }

    pub fn is_rate(&self) -> bool {
        self.count.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    #[default]
    Csv,
    Jsonl,
}

impl fmt::Display for RecordFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordFormat::Csv => "csv",
            RecordFormat::Jsonl => "jsonl",
        })
    }
}

impl FromStr for RecordFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(RecordFormat::Csv),
            "jsonl" | "json-lines" => Ok(RecordFormat::Jsonl),
            _ => Err(Error::Validation(format!("unknown record format `{s}`"))),
        }
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "scenario", "point", "metric", "value", "stderr", "trials", "seed", "count", "total",
];

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(e.to_string())
    }
}

/// Floats use Rust's shortest round-trip formatting, so re-reading yields the
/// same bits.
pub fn write_records<W: Write>(records: &[MetricRecord], format: RecordFormat, mut out: W) -> Result<()> {
    match format {
        RecordFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_HEADER).map_err(csv_error)?;
            for r in records {
                w.serialize(r).map_err(csv_error)?;
            }
            w.flush()?;
        }
        RecordFormat::Jsonl => {
            for r in records {
                serde_json::to_writer(&mut out, r).map_err(|e| Error::Parse(e.to_string()))?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R, format: RecordFormat) -> Result<Vec<MetricRecord>> {
    match format {
        RecordFormat::Csv => {
            let mut r = csv::Reader::from_reader(input);
            let header = r.headers().map_err(csv_error)?;
            if header.iter().ne(CSV_HEADER) {
                return Err(Error::Parse(format!("unexpected CSV header {:?}", header)));
            }
            r.deserialize().map(|row| row.map_err(csv_error)).collect()
        }
        RecordFormat::Jsonl => input
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| serde_json::from_str(&l?).map_err(|e| Error::Parse(e.to_string())))
            .collect(),
    }
}

pub fn export_records(records: &[MetricRecord], path: &Path, format: RecordFormat) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_records(records, format, std::io::BufWriter::new(file))
}

pub fn import_records(path: &Path, format: RecordFormat) -> Result<Vec<MetricRecord>> {
    let file = std::fs::File::open(path)?;
    read_records(std::io::BufReader::new(file), format)
}

pub fn records_to_string(records: &[MetricRecord], format: RecordFormat) -> Result<String> {
    let mut buf = Vec::new();
    write_records(records, format, &mut buf)?;
    Ok(String::from_utf8(buf).expect("records serialise to UTF-8"))
}
