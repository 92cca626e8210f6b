use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentResult, Summary, TimingRecord};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] = [
    "backend",
    "repetition",
    "epoch",
    "phase",
    "wall_seconds",
    "simulated_seconds",
    "bytes_read",
    "bytes_written",
    "cache_misses",
    "evictions",
];

pub const RECORDS_CSV: &str = "records.csv";
pub const RUN_JSON: &str = "run.json";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Serialize, Deserialize)]
struct RunFile {
    experiments: Vec<ExperimentResult>,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::storage(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Long-format CSV, one row per record, times to 6 decimals.
pub fn write_csv<W: Write>(records: &[TimingRecord], sink: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.backend.clone(),
            r.repetition.to_string(),
            r.epoch.to_string(),
            r.phase.to_string(),
            format!("{:.6}", r.wall_seconds),
            format!("{:.6}", r.simulated_seconds),
            r.stats.bytes_read.to_string(),
            r.stats.bytes_written.to_string(),
            r.stats.cache_misses.to_string(),
            r.stats.evictions.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::storage(path, e))
}

/// Writes `records.csv`, `run.json` and, when given, `summary.json` into `dir`.
pub fn emit(results: &[ExperimentResult], summary: Option<&Summary>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
    let csv_path = dir.join(RECORDS_CSV);
    let file = fs::File::create(&csv_path).map_err(|e| Error::storage(&csv_path, e))?;
    let records: Vec<TimingRecord> = results.iter().flat_map(|r| r.records.clone()).collect();
    write_csv(&records, std::io::BufWriter::new(file)).map_err(|e| csv_error(&csv_path, e))?;

    let run_path = dir.join(RUN_JSON);
    write_json(
        &run_path,
        &RunFile {
            experiments: results.to_vec(),
        },
    )?;
    let mut paths = vec![csv_path, run_path];
    if let Some(s) = summary {
        let p = dir.join(SUMMARY_JSON);
        write_json(&p, s)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Reads the experiments written by [`emit`].
pub fn read_run(dir: &Path) -> Result<Vec<ExperimentResult>> {
    let path = dir.join(RUN_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::storage(&path, e))?;
    let run: RunFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(run.experiments)
}
