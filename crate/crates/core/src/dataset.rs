//! Line-delimited dataset files: one header record followed by one example per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Example;

pub const DATASET_VERSION: u32 = 1;

/// Dataset-level constants shared by every record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    /// Timestamps per future trajectory.
    #[serde(rename = "M")]
    pub m: usize,
    /// Seconds between consecutive timestamps.
    pub dt: f64,
    /// History length used to build scene features.
    #[serde(rename = "H")]
    pub h: usize,
    /// Scene feature dimension.
    #[serde(rename = "F")]
    pub f: usize,
    pub version: u32,
}

impl DatasetHeader {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Argument(format!(
                "M must be at least 2, got {}",
                self.m
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Argument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.f == 0 {
            return Err(Error::Argument("F must be positive".into()));
        }
        if self.version != DATASET_VERSION {
            return Err(Error::Argument(format!(
                "unsupported dataset version {}",
                self.version
            )));
        }
        Ok(())
    }

    pub fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.ground_truth.len() != self.m {
            return Err(Error::Length {
                expected: self.m,
                actual: ex.ground_truth.len(),
            });
        }
        if ex.scene.len() != self.f {
            return Err(Error::Length {
                expected: self.f,
                actual: ex.scene.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub examples: Vec<Example>,
}

pub fn save_dataset(path: &Path, header: &DatasetHeader, examples: &[Example]) -> Result<()> {
    write_jsonl(path, header, examples)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (header, examples): (DatasetHeader, Vec<Example>) = read_jsonl(path)?;
    header
        .validate()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    for (i, ex) in examples.iter().enumerate() {
        header
            .check_example(ex)
            .map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
    }
    Ok(Dataset { header, examples })
}

/// Writes a header record and then one record per item, newline terminated.
pub(crate) fn write_jsonl<H: Serialize, R: Serialize>(
    path: &Path,
    header: &H,
    records: &[R],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_line(&mut w, header).map_err(|e| Error::io(path, e))?;
    for r in records {
        write_line(&mut w, r).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_line<T: Serialize>(w: &mut impl Write, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::other)?;
    w.write_all(b"\n")
}

/// Reads a header record followed by records, reporting 1-based line numbers on failure.
pub(crate) fn read_jsonl<H: DeserializeOwned, R: DeserializeOwned>(
    path: &Path,
) -> Result<(H, Vec<R>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, 1, format!("bad header: {e}")))?
        }
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, i + 1, format!("bad record: {e}")))?;
        records.push(rec);
    }
    Ok((header, records))
}
