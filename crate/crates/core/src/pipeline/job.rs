//! Jobs and their status machine.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::Stage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobStatus {
    Queued,
    Downloading,
    GatedNoCount,
    Inferring,
    PostProcessing,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::GatedNoCount | JobStatus::Failed)
    }

    pub fn name(self) -> &'static str {
        match self {
            JobStatus::Queued => "queued",
            JobStatus::Downloading => "downloading",
            JobStatus::GatedNoCount => "gated-no-count",
            JobStatus::Inferring => "inferring",
            JobStatus::PostProcessing => "post-processing",
            JobStatus::Done => "done",
            JobStatus::Failed => "failed",
        }
    }

    /// Legal single-step transitions.
    pub fn can_become(self, next: JobStatus) -> bool {
        use JobStatus::*;
        match (self, next) {
            (s, Failed) => !s.is_terminal(),
            (Queued, Downloading)
            | (Downloading, Inferring)
            | (Inferring, GatedNoCount)
            | (Inferring, PostProcessing)
            | (PostProcessing, Done) => true,
            _ => false,
        }
    }
}

pub type JobId = u64;

/// A slide waiting to be submitted, at `arrival_s` workload seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSource {
    pub source_dir: PathBuf,
    pub arrival_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineJob {
    pub job_id: JobId,
    pub slide_id: String,
    pub source_dir: PathBuf,
    pub status: JobStatus,
    /// `(status, seconds)` for every status entered, starting with Queued.
    pub history: Vec<(JobStatus, f64)>,
    /// `(stage, start, end)` of the work done on the job.
    pub spans: Vec<(Stage, f64, f64)>,
    pub tiles_total: usize,
    pub tiles_done: usize,
    pub detector_calls: u64,
    pub mf_total: Option<usize>,
    pub hpf_count: Option<usize>,
    pub reason: Option<String>,
}

impl PipelineJob {
    pub fn new(job_id: JobId, source_dir: PathBuf, now: f64) -> Self {
        let slide_id = source_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("job-{job_id}"));
        Self {
            job_id,
            slide_id,
            source_dir,
            status: JobStatus::Queued,
            history: vec![(JobStatus::Queued, now)],
            spans: Vec::new(),
            tiles_total: 0,
            tiles_done: 0,
            detector_calls: 0,
            mf_total: None,
            hpf_count: None,
            reason: None,
        }
    }

    pub fn advance(&mut self, next: JobStatus, now: f64) -> Result<()> {
        if !self.status.can_become(next) {
            return Err(Error::invalid(format!(
                "job {} cannot go from {} to {}",
                self.job_id,
                self.status.name(),
                next.name()
            )));
        }
        self.status = next;
        self.history.push((next, now));
        Ok(())
    }

    pub fn fail(&mut self, reason: impl Into<String>, now: f64) {
        if !self.status.is_terminal() {
            self.status = JobStatus::Failed;
            self.history.push((JobStatus::Failed, now));
        }
        self.reason.get_or_insert_with(|| reason.into());
    }

    pub fn entered(&self, status: JobStatus) -> Option<f64> {
        self.history.iter().find(|(s, _)| *s == status).map(|&(_, t)| t)
    }

    /// Seconds spent working on the job in `stage`.
    pub fn stage_time(&self, stage: Stage) -> f64 {
        self.spans.iter().filter(|s| s.0 == stage).map(|s| s.2 - s.1).sum()
    }

    pub fn queued_at(&self) -> f64 {
        self.history[0].1
    }

    pub fn finished_at(&self) -> Option<f64> {
        self.status.is_terminal().then(|| self.history.last().map(|&(_, t)| t)).flatten()
    }

    /// Terminal timestamp minus Queued timestamp.
    pub fn wall_time(&self) -> Option<f64> {
        self.finished_at().map(|t| t - self.queued_at())
    }
}
