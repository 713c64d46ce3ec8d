//! Result store: append-only newline-delimited records, one per case,
//! keyed by the case hash. Re-running a completed plan finds every record
//! present and leaves the file untouched.

use crate::cases::SourceLabel;
use crate::RunnerError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use step_core::metrics::FinalMetric;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Computed,
    Cached,
    Skipped { reason: String },
    Failed { error: String },
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Computed | Status::Cached)
    }
}

/// Human-facing case identity, denormalized for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDescriptor {
    pub corpus_id: String,
    pub dataset_ids: Vec<String>,
    pub perturbation_ids: Vec<String>,
    pub n_input: usize,
    pub n_output: usize,
    pub dt: f64,
    pub t0_policy: String,
    pub split_id: String,
    pub fold_index: Option<usize>,
    pub model_id: String,
    pub metric: String,
    pub seed: u64,
    pub source: SourceLabel,
}

/// Wall-clock timings, milliseconds. Excluded from hashing and from
/// idempotence comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: u64,
    pub train_ms: u64,
    pub predict_ms: u64,
    pub eval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub case_hash: String,
    pub case: CaseDescriptor,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<FinalMetric>,
    pub versions: BTreeMap<String, String>,
    pub timings: Timings,
}

impl ResultRecord {
    pub fn versions_now() -> BTreeMap<String, String> {
        let mut v = BTreeMap::new();
        v.insert("step-core".to_string(), env!("CARGO_PKG_VERSION").to_string());
        v.insert("store-format".to_string(), "1".to_string());
        v
    }
}

/// The on-disk store plus an index of known case hashes.
pub struct ResultStore {
    path: PathBuf,
    known: BTreeMap<String, ResultRecord>,
}

impl ResultStore {
    pub fn open(path: &Path) -> Result<Self, RunnerError> {
        let known = if path.exists() {
            read_store(path)?
                .into_iter()
                .map(|r| (r.case_hash.clone(), r))
                .collect()
        } else {
            BTreeMap::new()
        };
        Ok(Self { path: path.to_path_buf(), known })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, case_hash: &str) -> Option<&ResultRecord> {
        self.known.get(case_hash)
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    /// Appends records not yet present, in the order given. The stored
    /// line for a cached rerun is the original record, so reruns leave the
    /// file byte-identical.
    pub fn append_new(&mut self, records: &[ResultRecord]) -> Result<(), RunnerError> {
        let fresh: Vec<&ResultRecord> = records
            .iter()
            .filter(|r| !self.known.contains_key(&r.case_hash))
            .collect();
        if fresh.is_empty() {
            return Ok(());
        }
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| crate::io_err(e, dir))?;
        }
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| crate::io_err(e, &self.path))?;
        for record in fresh {
            let line = serde_json::to_string(record)
                .map_err(|e| RunnerError::Io(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| crate::io_err(e, &self.path))?;
            self.known.insert(record.case_hash.clone(), record.clone());
        }
        Ok(())
    }
}

/// Reads every record of a store file.
pub fn read_store(path: &Path) -> Result<Vec<ResultRecord>, RunnerError> {
    let raw = std::fs::read_to_string(path).map_err(|e| crate::io_err(e, path))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ResultRecord = serde_json::from_str(line).map_err(|e| {
            RunnerError::Io(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use step_core::metrics::MetricId;

    fn record(hash: &str, value: f64) -> ResultRecord {
        ResultRecord {
            case_hash: hash.into(),
            case: CaseDescriptor {
                corpus_id: "all".into(),
                dataset_ids: vec!["roads".into()],
                perturbation_ids: vec![],
                n_input: 4,
                n_output: 3,
                dt: 0.5,
                t0_policy: "first_available".into(),
                split_id: "rand".into(),
                fold_index: None,
                model_id: "cv".into(),
                metric: "min_ade".into(),
                seed: 0,
                source: SourceLabel::Std,
            },
            status: Status::Computed,
            metric: Some(FinalMetric { metric_id: MetricId::MinAde, value, n: 10 }),
            versions: ResultRecord::versions_now(),
            timings: Timings::default(),
        }
    }

    #[test]
    fn append_dedupes_by_case_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.ndjson");
        let mut store = ResultStore::open(&path).unwrap();
        store.append_new(&[record("h1", 1.0), record("h2", 2.0)]).unwrap();
        let first = std::fs::read(&path).unwrap();

        // appending the same cases again leaves the file untouched
        let mut store = ResultStore::open(&path).unwrap();
        store.append_new(&[record("h1", 1.0), record("h2", 2.0)]).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());

        // a new case extends the file
        store.append_new(&[record("h3", 3.0)]).unwrap();
        let records = read_store(&path).unwrap();
        assert_eq!(records.len(), 3);
    }
}
