//! Newline-delimited JSON logs: one detection record or sensor record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{FrameDetections, SensorSample};
use crate::error::{Error, Result};

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const SENSORS_FILE: &str = "sensors.jsonl";

pub fn write_records<T: Serialize>(records: &[T], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<T: DeserializeOwned>(input: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidRecord(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_file<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_records(records, BufWriter::new(File::create(path)?))
}

pub fn read_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_records(BufReader::new(File::open(path)?))
}

/// Reads `detections.jsonl` and `sensors.jsonl` from a log directory.
pub fn read_log_dir(dir: &Path) -> Result<(Vec<FrameDetections>, Vec<SensorSample>)> {
    let frames = read_file(&dir.join(DETECTIONS_FILE))?;
    let sensors = read_file(&dir.join(SENSORS_FILE))?;
    Ok((frames, sensors))
}

pub fn write_log_dir(
    dir: &Path,
    frames: &[FrameDetections],
    sensors: &[SensorSample],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_file(&dir.join(DETECTIONS_FILE), frames)?;
    write_file(&dir.join(SENSORS_FILE), sensors)?;
    Ok(())
}
