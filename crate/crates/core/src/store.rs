//! Append-only result store: one JSON record per line.
//!
//! Writers take an exclusive advisory lock on the file for each append and
//! retry with a fixed backoff while another writer holds it.

use std::fs::{File, OpenOptions, TryLockError};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Context, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordStatus {
    Counted,
    NoCount,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub download_s: f64,
    pub inference_s: f64,
    pub postprocess_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub slide_id: String,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mf_total: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hpf_count: Option<usize>,
    #[serde(default)]
    pub timings: StageTimings,
    #[serde(default)]
    pub tiles: usize,
    #[serde(default)]
    pub detector_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl ResultRecord {
    pub fn counted(slide_id: impl Into<String>, mf_total: usize, hpf_count: Option<usize>) -> Self {
        Self {
            slide_id: slide_id.into(),
            status: RecordStatus::Counted,
            mf_total: Some(mf_total),
            hpf_count,
            timings: StageTimings::default(),
            tiles: 0,
            detector_calls: 0,
            reason: None,
        }
    }

    pub fn no_count(slide_id: impl Into<String>) -> Self {
        Self {
            status: RecordStatus::NoCount,
            mf_total: None,
            ..Self::counted(slide_id, 0, None)
        }
    }

    pub fn failed(slide_id: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            status: RecordStatus::Failed,
            mf_total: None,
            reason: Some(reason.into()),
            ..Self::counted(slide_id, 0, None)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.status {
            RecordStatus::NoCount if self.mf_total.is_some() || self.hpf_count.is_some() => {
                Err(Error::invalid(format!("no-count record {} carries counts", self.slide_id)))
            }
            RecordStatus::Counted if self.mf_total.is_none() => {
                Err(Error::invalid(format!("counted record {} lacks mf_total", self.slide_id)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResultStore {
    path: PathBuf,
    max_attempts: u32,
    backoff: Duration,
}

impl ResultStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
        }
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .context(|| format!("opening {}", path.display()))?;
        Ok(Self {
            path,
            max_attempts: 2000,
            backoff: Duration::from_millis(1),
        })
    }

    pub fn with_retry(mut self, max_attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn lock(&self, file: &File, exclusive: bool) -> Result<()> {
        for _ in 0..self.max_attempts {
            let attempt = if exclusive { file.try_lock() } else { file.try_lock_shared() };
            match attempt {
                Ok(()) => return Ok(()),
                Err(TryLockError::WouldBlock) => thread::sleep(self.backoff),
                Err(TryLockError::Error(e)) => {
                    return Err(Error::Io {
                        context: format!("locking {}", self.path.display()),
                        source: e,
                    })
                }
            }
        }
        Err(Error::StoreBusy {
            path: self.path.clone(),
            attempts: self.max_attempts,
        })
    }

    pub fn append(&self, record: &ResultRecord) -> Result<()> {
        record.validate()?;
        let mut line = serde_json::to_string(record).context(|| "serializing result record".into())?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .context(|| format!("opening {}", self.path.display()))?;
        self.lock(&file, true)?;
        let written = file.write_all(line.as_bytes()).and_then(|_| file.sync_data());
        let unlocked = file.unlock();
        written.context(|| format!("appending to {}", self.path.display()))?;
        unlocked.context(|| format!("unlocking {}", self.path.display()))
    }

    /// Records in insertion order that satisfy `filter`.
    pub fn scan(&self, filter: impl Fn(&ResultRecord) -> bool) -> Result<Vec<ResultRecord>> {
        let file = File::open(&self.path).context(|| format!("opening {}", self.path.display()))?;
        self.lock(&file, false)?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(&file).lines().enumerate() {
            let line = line.context(|| format!("reading {}", self.path.display()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ResultRecord = serde_json::from_str(&line)
                .context(|| format!("{} line {}", self.path.display(), i + 1))?;
            if filter(&record) {
                out.push(record);
            }
        }
        file.unlock().context(|| format!("unlocking {}", self.path.display()))?;
        Ok(out)
    }

    pub fn scan_all(&self) -> Result<Vec<ResultRecord>> {
        self.scan(|_| true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_then_scan() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path().join("results.jsonl")).unwrap();
        let mut rec = ResultRecord::counted("a", 12, Some(4));
        rec.timings.total_s = 1.5;
        store.append(&rec).unwrap();
        store.append(&ResultRecord::no_count("b")).unwrap();
        let all = store.scan_all().unwrap();
        assert_eq!(all, vec![rec, ResultRecord::no_count("b")]);
        assert_eq!(all[1].mf_total, None);
        let counted = store.scan(|r| r.status == RecordStatus::Counted).unwrap();
        assert_eq!(counted.len(), 1);
    }

    #[test]
    fn no_count_line_has_no_total() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path().join("r.jsonl")).unwrap();
        store.append(&ResultRecord::no_count("x")).unwrap();
        let text = std::fs::read_to_string(store.path()).unwrap();
        assert!(text.contains(r#""status":"no-count""#));
        assert!(!text.contains("mf_total"));
        let mut bad = ResultRecord::no_count("y");
        bad.mf_total = Some(1);
        assert!(store.append(&bad).is_err());
    }

    #[test]
    fn held_lock_reports_busy() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path().join("r.jsonl"))
            .unwrap()
            .with_retry(3, Duration::from_millis(1));
        let holder = File::open(store.path()).unwrap();
        holder.lock().unwrap();
        match store.append(&ResultRecord::no_count("z")) {
            Err(Error::StoreBusy { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected busy, got {other:?}"),
        }
        holder.unlock().unwrap();
        store.append(&ResultRecord::no_count("z")).unwrap();
        assert_eq!(store.scan_all().unwrap().len(), 1);
    }
}
