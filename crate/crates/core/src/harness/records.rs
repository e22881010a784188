//! Append-only per-cell result log (`records.jsonl`).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::embedders::Provenance;
use crate::metrics::MetricBundle;
use crate::regressor::RegressionReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlfdSummary {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
    pub excluded_pairs: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok {
        metrics: MetricBundle,
        nlfd: Option<NlfdSummary>,
        report: RegressionReport,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub key: String,
    pub config_hash: String,
    pub task: String,
    pub family: String,
    pub embedder: String,
    pub provenance: Provenance,
    pub seed: u64,
    #[serde(default)]
    pub train_size: Option<usize>,
    #[serde(default)]
    pub format: Option<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

impl CellRecord {
    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, CellOutcome::Ok { .. })
    }

    pub fn metrics(&self) -> Option<&MetricBundle> {
        match &self.outcome {
            CellOutcome::Ok { metrics, .. } => Some(metrics),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn nlfd(&self) -> Option<&NlfdSummary> {
        match &self.outcome {
            CellOutcome::Ok { nlfd, .. } => nlfd.as_ref(),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn kendall(&self) -> Option<f64> {
        self.metrics().map(|m| m.kendall_tau)
    }
}

/// Records keyed by cell; the last record for a key wins.
pub struct RecordStore {
    path: PathBuf,
    records: Mutex<HashMap<String, CellRecord>>,
    file: Mutex<File>,
}

impl RecordStore {
    /// Opens (or with `truncate`, resets) the log at `path`. A torn final
    /// line from an interrupted run is dropped.
    pub fn open(path: &Path, truncate: bool) -> Result<Self, HarnessError> {
        let mut records = HashMap::new();
        if path.exists() && !truncate {
            let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
            let last = lines.len().saturating_sub(1);
            let mut valid_len = 0usize;
            for (i, line) in lines.iter().enumerate() {
                match serde_json::from_str::<CellRecord>(line) {
                    Ok(r) => {
                        records.insert(r.key.clone(), r);
                        valid_len += line.len() + 1;
                    }
                    Err(_) if line.trim().is_empty() => valid_len += line.len() + 1,
                    Err(_) if i == last => {
                        // Cut the torn tail so later appends start on a fresh line.
                        let f = OpenOptions::new().write(true).open(path)?;
                        f.set_len(valid_len as u64)?;
                    }
                    Err(e) => {
                        return Err(HarnessError::Records(format!(
                            "{} line {}: {e}",
                            path.display(),
                            i + 1
                        )))
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .truncate(false)
            .open(path)?;
        if truncate {
            file.set_len(0)?;
        }
        Ok(RecordStore {
            path: path.to_path_buf(),
            records: Mutex::new(records),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<CellRecord> {
        self.records.lock().unwrap().get(key).cloned()
    }

    pub fn is_complete(&self, key: &str) -> bool {
        self.records.lock().unwrap().get(key).is_some_and(|r| r.is_ok())
    }

    pub fn append(&self, record: CellRecord) -> Result<(), HarnessError> {
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        {
            let mut f = self.file.lock().unwrap();
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.records.lock().unwrap().insert(record.key.clone(), record);
        Ok(())
    }
}
