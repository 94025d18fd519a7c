//! Run metrics: per-job timings, per-stage utilization, queue depths.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunMode, Stage};
use super::job::{JobStatus, PipelineJob};
use crate::error::{Context, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMetrics {
    pub job_id: u64,
    pub slide_id: String,
    pub status: JobStatus,
    pub queued_at: f64,
    pub finished_at: f64,
    pub wall_s: f64,
    pub download_s: f64,
    pub inference_s: f64,
    pub postprocess_s: f64,
    pub tiles: usize,
    pub detector_calls: u64,
    pub mf_total: Option<usize>,
    pub hpf_count: Option<usize>,
    pub reason: Option<String>,
}

impl JobMetrics {
    pub fn from_job(job: &PipelineJob) -> Self {
        let finished = job.finished_at().unwrap_or(f64::NAN);
        Self {
            job_id: job.job_id,
            slide_id: job.slide_id.clone(),
            status: job.status,
            queued_at: job.queued_at(),
            finished_at: finished,
            wall_s: finished - job.queued_at(),
            download_s: job.stage_time(Stage::Download),
            inference_s: job.stage_time(Stage::Inference),
            postprocess_s: job.stage_time(Stage::Postprocess),
            tiles: job.tiles_total,
            detector_calls: job.detector_calls,
            mf_total: job.mf_total,
            hpf_count: job.hpf_count,
            reason: job.reason.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: Stage,
    pub workers: usize,
    pub capacity: usize,
    /// Jobs a worker of this stage finished working on.
    pub processed: usize,
    pub busy_s: f64,
    pub utilization: f64,
    pub throughput_per_s: f64,
    pub max_queue_depth: usize,
    /// `(seconds, depth)` of the queue feeding the stage.
    pub queue_depth: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub mode: RunMode,
    pub jobs: Vec<JobMetrics>,
    pub stages: Vec<StageMetrics>,
    pub makespan_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub min_s: f64,
    pub avg_s: f64,
    pub max_s: f64,
}

/// Busy seconds and processed jobs per stage, accumulated by a runner.
#[derive(Debug, Clone, Default)]
pub struct StageTally {
    pub busy_s: f64,
    pub processed: usize,
}

impl PipelineMetrics {
    pub fn build(
        mode: RunMode,
        mut jobs: Vec<PipelineJob>,
        tallies: [StageTally; 3],
        depth_logs: [Vec<(f64, usize)>; 3],
        workers: [usize; 3],
        capacities: [usize; 3],
    ) -> Self {
        jobs.sort_by_key(|j| j.job_id);
        let jobs: Vec<JobMetrics> = jobs.iter().map(JobMetrics::from_job).collect();
        let start = jobs.iter().map(|j| j.queued_at).fold(f64::INFINITY, f64::min);
        let end = jobs.iter().map(|j| j.finished_at).fold(f64::NEG_INFINITY, f64::max);
        let makespan_s = if jobs.is_empty() { 0.0 } else { (end - start).max(0.0) };
        let [d0, d1, d2] = depth_logs;
        let stages = Stage::ALL
            .iter()
            .zip(tallies)
            .zip([d0, d1, d2])
            .map(|((&stage, tally), depth)| {
                let i = stage.index();
                let span = makespan_s.max(f64::MIN_POSITIVE);
                StageMetrics {
                    stage,
                    workers: workers[i],
                    capacity: capacities[i],
                    processed: tally.processed,
                    busy_s: tally.busy_s,
                    utilization: if makespan_s > 0.0 { tally.busy_s / (span * workers[i] as f64) } else { 0.0 },
                    throughput_per_s: if makespan_s > 0.0 { tally.processed as f64 / span } else { 0.0 },
                    max_queue_depth: depth.iter().map(|d| d.1).max().unwrap_or(0),
                    queue_depth: depth,
                }
            })
            .collect();
        Self {
            mode,
            jobs,
            stages,
            makespan_s,
        }
    }

    pub fn count(&self, status: JobStatus) -> usize {
        self.jobs.iter().filter(|j| j.status == status).count()
    }

    /// Slides that reached Done or Gated-NoCount per second of makespan.
    pub fn throughput_per_s(&self) -> f64 {
        let n = self.count(JobStatus::Done) + self.count(JobStatus::GatedNoCount);
        if self.makespan_s > 0.0 {
            n as f64 / self.makespan_s
        } else {
            0.0
        }
    }

    /// Wall time over jobs that finished without failing.
    pub fn latency(&self) -> Option<LatencyStats> {
        let walls: Vec<f64> = self
            .jobs
            .iter()
            .filter(|j| j.status != JobStatus::Failed)
            .map(|j| j.wall_s)
            .collect();
        if walls.is_empty() {
            return None;
        }
        Some(LatencyStats {
            min_s: walls.iter().copied().fold(f64::INFINITY, f64::min),
            avg_s: walls.iter().sum::<f64>() / walls.len() as f64,
            max_s: walls.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub fn stage(&self, stage: Stage) -> &StageMetrics {
        &self.stages[stage.index()]
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            RunMode::WallClock => "wall-clock",
            RunMode::Virtual => "virtual-time",
        };
        let _ = writeln!(s, "mode: {mode}");
        let _ = writeln!(
            s,
            "slides: {} submitted, {} counted, {} no-count, {} failed",
            self.jobs.len(),
            self.count(JobStatus::Done),
            self.count(JobStatus::GatedNoCount),
            self.count(JobStatus::Failed)
        );
        let _ = writeln!(s, "makespan: {:.3} s", self.makespan_s);
        let _ = writeln!(s, "throughput: {:.4} slides/s", self.throughput_per_s());
        if let Some(l) = self.latency() {
            let _ = writeln!(
                s,
                "slide latency: min {:.3} s, avg {:.3} s, max {:.3} s ({:.4} min/slide avg)",
                l.min_s,
                l.avg_s,
                l.max_s,
                l.avg_s / 60.0
            );
        }
        for st in &self.stages {
            let _ = writeln!(
                s,
                "{:<12} workers {:>2}  processed {:>5}  utilization {:>5.1}%  max queue {}/{}",
                st.stage.name(),
                st.workers,
                st.processed,
                100.0 * st.utilization,
                st.max_queue_depth,
                st.capacity
            );
        }
        s
    }

    /// Writes `jobs.csv`, `stages.csv`, `queue_depth.csv` and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut jobs = String::from(
            "job_id,slide_id,status,queued_at,finished_at,wall_s,download_s,inference_s,postprocess_s,tiles,detector_calls,mf_total,hpf_count\n",
        );
        for j in &self.jobs {
            let _ = writeln!(
                jobs,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
                j.job_id,
                j.slide_id,
                j.status.name(),
                j.queued_at,
                j.finished_at,
                j.wall_s,
                j.download_s,
                j.inference_s,
                j.postprocess_s,
                j.tiles,
                j.detector_calls,
                opt(j.mf_total),
                opt(j.hpf_count)
            );
        }
        let mut stages = String::from("stage,workers,capacity,processed,busy_s,utilization,throughput_per_s,max_queue_depth\n");
        let mut depth = String::from("stage,t,depth\n");
        for st in &self.stages {
            let _ = writeln!(
                stages,
                "{},{},{},{},{:.6},{:.6},{:.6},{}",
                st.stage.name(),
                st.workers,
                st.capacity,
                st.processed,
                st.busy_s,
                st.utilization,
                st.throughput_per_s,
                st.max_queue_depth
            );
            for (t, d) in &st.queue_depth {
                let _ = writeln!(depth, "{},{t:.6},{d}", st.stage.name());
            }
        }
        let files = [
            ("jobs.csv", jobs),
            ("stages.csv", stages),
            ("queue_depth.csv", depth),
            ("summary.txt", self.summary()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}
