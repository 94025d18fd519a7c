//! Download → inference → post-processing worker pipeline.

mod config;
mod job;
mod metrics;
mod queue;
mod sim;
mod stages;
mod threaded;
mod workload;

use std::path::Path;

pub use config::{
    ArrivalModel, CrashInjection, PipelineConfig, QueueCapacities, RunMode, ServiceModel, Stage, SubmitPolicy,
    WorkerCounts, WorkloadSpec, ENV_DOWNLOAD_WORKERS, ENV_INFERENCE_WORKERS, ENV_OUT_DIR, ENV_POSTPROCESS_WORKERS,
};
pub use job::{JobId, JobSource, JobStatus, PipelineJob};
pub use metrics::{JobMetrics, LatencyStats, PipelineMetrics, StageMetrics};
pub use queue::{BoundedQueue, StageQueue};
pub use sim::run_virtual;
pub use stages::{Inference, PostOutcome, RunPaths, StageWork, TileMasks};
pub use threaded::{run_wallclock, Pipeline};
pub use workload::{arrival_times, generate_workload, workload_slides};

use crate::error::Result;

/// Runs already materialized slides and writes metrics under `out_dir`.
pub fn run_sources(config: &PipelineConfig, sources: &[JobSource], out_dir: &Path, time_scale: f64) -> Result<PipelineMetrics> {
    let paths = RunPaths::new(out_dir, config.buffer_dir.as_deref())?;
    let metrics_dir = paths.metrics_dir.clone();
    let work = StageWork::new(config.clone(), paths)?;
    let metrics = match config.mode {
        RunMode::WallClock => run_wallclock(work, sources, time_scale)?,
        RunMode::Virtual => run_virtual(&work, sources)?,
    };
    metrics.write(&metrics_dir)?;
    Ok(metrics)
}

/// Generates the workload's slides under `out_dir/slides` and runs them.
pub fn run_pipeline(config: &PipelineConfig, workload: &WorkloadSpec, out_dir: &Path) -> Result<PipelineMetrics> {
    config.validate()?;
    let mut config = config.clone();
    config.batch_size = workload.batch_size;
    config.validate()?;
    let sources = generate_workload(workload, &out_dir.join("slides"))?;
    run_sources(&config, &sources, out_dir, workload.time_scale)
}
