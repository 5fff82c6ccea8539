//! Line-delimited JSON streams: metrics, weight trajectories and score dumps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixers::TrajectoryRecord;
use crate::model::digest_bytes;
use crate::selectors::ScoreVector;
use crate::types::MetricsRecord;

/// One JSON line per record, fields in declaration order.
pub fn metrics_line(record: &MetricsRecord) -> String {
    serde_json::to_string(record).expect("metrics records serialize")
}

pub fn write_metrics<W: Write>(out: &mut W, record: &MetricsRecord) -> std::io::Result<()> {
    writeln!(out, "{}", metrics_line(record))
}

/// Digest over the serialized stream; equal digests mean bitwise-equal metrics.
pub fn metrics_digest(records: &[MetricsRecord]) -> u64 {
    let mut bytes = Vec::new();
    for r in records {
        bytes.extend_from_slice(metrics_line(r).as_bytes());
        bytes.push(b'\n');
    }
    digest_bytes(&bytes)
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSONL file; a bad line is reported together with the last good one.
pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut last_good = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n,
            message: format!("corrupt record ({e}); last good line is {last_good}"),
        })?;
        out.push(item);
        last_good = n;
    }
    Ok(out)
}

pub fn save_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_lines(path, records)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    read_lines(path)
}

pub fn write_trajectory(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    write_lines(path, records)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    read_lines(path)
}

/// One line of a score dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: u64,
    pub score: f64,
    pub method: String,
}

pub fn write_scores(path: &Path, scores: &ScoreVector) -> Result<()> {
    let records: Vec<ScoreRecord> = scores
        .ids
        .iter()
        .zip(&scores.scores)
        .map(|(&id, &score)| ScoreRecord {
            id,
            score,
            method: scores.method.clone(),
        })
        .collect();
    write_lines(path, &records)
}
