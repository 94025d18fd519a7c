//! Wall-clock runner: real worker threads joined by bounded queues.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::config::{RunMode, Stage, SubmitPolicy};
use super::job::{JobId, JobSource, JobStatus, PipelineJob};
use super::metrics::{PipelineMetrics, StageTally};
use super::queue::{BoundedQueue, StageQueue};
use super::stages::{Inference, StageWork, TileMasks};
use crate::error::{Error, Result};
use crate::synth::SlideDir;

type InferItem = (PipelineJob, SlideDir);
type PostItem = (PipelineJob, SlideDir, TileMasks);

struct Shared {
    work: StageWork,
    epoch: Instant,
    next_id: AtomicU64,
    download_q: BoundedQueue<PipelineJob>,
    inference_q: BoundedQueue<InferItem>,
    postprocess_q: BoundedQueue<PostItem>,
    live: [AtomicUsize; 3],
    finished: Mutex<Vec<PipelineJob>>,
    tallies: Mutex<[StageTally; 3]>,
}

impl Shared {
    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    fn conclude(&self, mut job: PipelineJob, status: JobStatus) {
        self.work.conclude(&mut job, status, self.now());
        self.finished.lock().unwrap_or_else(|p| p.into_inner()).push(job);
    }

    fn fail(&self, mut job: PipelineJob, reason: String) {
        job.fail(reason, self.now());
        self.conclude(job, JobStatus::Failed);
    }

    fn tally(&self, stage: Stage, start: f64) {
        let mut t = self.tallies.lock().unwrap_or_else(|p| p.into_inner());
        t[stage.index()].busy_s += self.now() - start;
        t[stage.index()].processed += 1;
    }

    fn crashes(&self, stage: Stage, worker: usize, handled: usize) -> bool {
        self.work
            .config
            .crash
            .is_some_and(|c| c.stage == stage && c.worker == worker && c.after_jobs == handled)
    }

    /// Called as a worker exits. The last worker of a stage closes the next
    /// queue; if it exits early (crash), it also fails whatever is still
    /// waiting in its own queue so upstream producers are not stranded.
    fn worker_exit<T: Send>(&self, stage: Stage, input: &BoundedQueue<T>, crashed: bool, mut orphan: impl FnMut(T)) {
        if self.live[stage.index()].fetch_sub(1, Ordering::SeqCst) != 1 {
            return;
        }
        if crashed {
            input.close();
            while let Some(item) = input.pop() {
                orphan(item);
            }
        }
        match stage {
            Stage::Download => self.inference_q.close(),
            Stage::Inference => self.postprocess_q.close(),
            Stage::Postprocess => {}
        }
    }
}

fn panic_reason(stage: Stage, worker: usize) -> String {
    format!("{} worker {worker} crashed", stage.name())
}

fn download_worker(shared: &Shared, worker: usize) {
    let stage = Stage::Download;
    let mut handled = 0;
    let mut crashed = false;
    while let Some(mut job) = shared.download_q.pop() {
        let start = shared.now();
        let _ = job.advance(JobStatus::Downloading, start);
        let crash = shared.crashes(stage, worker, handled);
        let result = catch_unwind(AssertUnwindSafe(|| {
            if crash {
                panic!("injected crash");
            }
            let latency = shared.work.config.service.network_latency_s;
            if latency > 0.0 {
                thread::sleep(Duration::from_secs_f64(latency));
            }
            shared.work.download(&mut job)
        }));
        handled += 1;
        job.spans.push((stage, start, shared.now()));
        shared.tally(stage, start);
        match result {
            Ok(Ok(slide)) => {
                if let Err(e) = shared.inference_q.push((job.clone(), slide)) {
                    shared.fail(job, format!("forwarding to inference: {e}"));
                }
            }
            Ok(Err(e)) => shared.fail(job, format!("download: {e}")),
            Err(_) => {
                shared.fail(job, panic_reason(stage, worker));
                crashed = true;
                break;
            }
        }
    }
    shared.worker_exit(stage, &shared.download_q, crashed, |job| {
        shared.fail(job, "no download worker left".into())
    });
}

fn inference_worker(shared: &Shared, worker: usize) {
    let stage = Stage::Inference;
    let mut handled = 0;
    let mut crashed = false;
    while let Some((mut job, slide)) = shared.inference_q.pop() {
        let start = shared.now();
        let _ = job.advance(JobStatus::Inferring, start);
        let crash = shared.crashes(stage, worker, handled);
        let result = catch_unwind(AssertUnwindSafe(|| {
            if crash {
                panic!("injected crash");
            }
            shared.work.infer(&mut job, &slide)
        }));
        handled += 1;
        job.spans.push((stage, start, shared.now()));
        shared.tally(stage, start);
        match result {
            Ok(Ok(Inference::NoCount(_))) => shared.conclude(job, JobStatus::GatedNoCount),
            Ok(Ok(Inference::Masks(masks))) => {
                if let Err(e) = shared.postprocess_q.push((job.clone(), slide, masks)) {
                    shared.fail(job, format!("forwarding to post-processing: {e}"));
                }
            }
            Ok(Err(e)) => shared.fail(job, format!("inference: {e}")),
            Err(_) => {
                shared.fail(job, panic_reason(stage, worker));
                crashed = true;
                break;
            }
        }
    }
    shared.worker_exit(stage, &shared.inference_q, crashed, |(job, _)| {
        shared.fail(job, "no inference worker left".into())
    });
}

fn postprocess_worker(shared: &Shared, worker: usize) {
    let stage = Stage::Postprocess;
    let mut handled = 0;
    let mut crashed = false;
    while let Some((mut job, slide, masks)) = shared.postprocess_q.pop() {
        let start = shared.now();
        let _ = job.advance(JobStatus::PostProcessing, start);
        let crash = shared.crashes(stage, worker, handled);
        let result = catch_unwind(AssertUnwindSafe(|| {
            if crash {
                panic!("injected crash");
            }
            shared.work.postprocess(&slide, &masks)
        }));
        handled += 1;
        job.spans.push((stage, start, shared.now()));
        shared.tally(stage, start);
        match result {
            Ok(Ok(outcome)) => {
                job.mf_total = Some(outcome.mf_total);
                job.hpf_count = outcome.hpf_count;
                shared.conclude(job, JobStatus::Done);
            }
            Ok(Err(e)) => shared.fail(job, format!("post-processing: {e}")),
            Err(_) => {
                shared.fail(job, panic_reason(stage, worker));
                crashed = true;
                break;
            }
        }
    }
    shared.worker_exit(stage, &shared.postprocess_q, crashed, |(job, _, _)| {
        shared.fail(job, "no post-processing worker left".into())
    });
}

/// A running pipeline accepting submissions.
pub struct Pipeline {
    shared: Arc<Shared>,
    handles: Vec<JoinHandle<()>>,
}

impl Pipeline {
    pub fn start(work: StageWork) -> Result<Self> {
        let epoch = Instant::now();
        let cfg = &work.config;
        let workers = cfg.workers;
        let shared = Arc::new(Shared {
            download_q: BoundedQueue::with_epoch(cfg.queues.download, epoch)?,
            inference_q: BoundedQueue::with_epoch(cfg.queues.inference, epoch)?,
            postprocess_q: BoundedQueue::with_epoch(cfg.queues.postprocess, epoch)?,
            live: [
                AtomicUsize::new(workers.download),
                AtomicUsize::new(workers.inference),
                AtomicUsize::new(workers.postprocess),
            ],
            work,
            epoch,
            next_id: AtomicU64::new(1),
            finished: Mutex::new(Vec::new()),
            tallies: Mutex::new(Default::default()),
        });
        let mut handles = Vec::new();
        for stage in Stage::ALL {
            for w in 0..workers.get(stage) {
                let s = Arc::clone(&shared);
                let body: fn(&Shared, usize) = match stage {
                    Stage::Download => download_worker,
                    Stage::Inference => inference_worker,
                    Stage::Postprocess => postprocess_worker,
                };
                let handle = thread::Builder::new()
                    .name(format!("{}-{w}", stage.name()))
                    .spawn(move || body(&s, w))
                    .map_err(|e| Error::Io {
                        context: "spawning worker".into(),
                        source: e,
                    })?;
                handles.push(handle);
            }
        }
        Ok(Self { shared, handles })
    }

    fn new_job(&self, source_dir: PathBuf) -> PipelineJob {
        let id = self.shared.next_id.fetch_add(1, Ordering::SeqCst);
        PipelineJob::new(id, source_dir, self.shared.now())
    }

    /// Enqueues a slide, waiting for space.
    pub fn submit(&self, source_dir: impl Into<PathBuf>) -> Result<JobId> {
        let job = self.new_job(source_dir.into());
        let id = job.job_id;
        if let Err(e) = self.shared.download_q.push(job.clone()) {
            self.shared.fail(job, format!("submit: {e}"));
            return Err(e);
        }
        Ok(id)
    }

    /// Enqueues a slide if there is space; [`Error::Backpressure`] otherwise.
    /// A refused submission creates no job.
    pub fn try_submit(&self, source_dir: impl Into<PathBuf>) -> Result<JobId> {
        let job = self.new_job(source_dir.into());
        let id = job.job_id;
        match self.shared.download_q.try_push(job) {
            Ok(()) => Ok(id),
            Err((job, e @ Error::QueueClosed)) => {
                self.shared.fail(job, format!("submit: {e}"));
                Err(e)
            }
            Err((_, e)) => Err(e),
        }
    }

    pub fn elapsed_s(&self) -> f64 {
        self.shared.now()
    }

    pub fn queue_len(&self, stage: Stage) -> usize {
        match stage {
            Stage::Download => self.shared.download_q.len(),
            Stage::Inference => self.shared.inference_q.len(),
            Stage::Postprocess => self.shared.postprocess_q.len(),
        }
    }

    /// Stops accepting work, drains every stage and joins the workers.
    pub fn finish(self) -> PipelineMetrics {
        self.shared.download_q.close();
        for h in self.handles {
            let _ = h.join();
        }
        let s = &self.shared;
        let cfg = &s.work.config;
        let jobs = std::mem::take(&mut *s.finished.lock().unwrap_or_else(|p| p.into_inner()));
        let tallies = std::mem::take(&mut *s.tallies.lock().unwrap_or_else(|p| p.into_inner()));
        PipelineMetrics::build(
            RunMode::WallClock,
            jobs,
            tallies,
            [s.download_q.depth_log(), s.inference_q.depth_log(), s.postprocess_q.depth_log()],
            [cfg.workers.download, cfg.workers.inference, cfg.workers.postprocess],
            [cfg.queues.download, cfg.queues.inference, cfg.queues.postprocess],
        )
    }
}

/// Submits every source in arrival order and runs to completion.
///
/// Arrival offsets are honored scaled by `time_scale` real seconds per
/// workload second (0 submits back to back).
pub fn run_wallclock(work: StageWork, sources: &[JobSource], time_scale: f64) -> Result<PipelineMetrics> {
    let policy = work.config.submit;
    let retry = Duration::from_secs_f64(work.config.retry_after_s);
    let pipeline = Pipeline::start(work)?;
    let mut order: Vec<&JobSource> = sources.iter().collect();
    order.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
    for src in order {
        let due = src.arrival_s * time_scale;
        let now = pipeline.elapsed_s();
        if due > now {
            thread::sleep(Duration::from_secs_f64(due - now));
        }
        match policy {
            SubmitPolicy::Block => {
                let _ = pipeline.submit(&src.source_dir);
            }
            SubmitPolicy::Retry => {
                while let Err(Error::Backpressure { .. }) = pipeline.try_submit(&src.source_dir) {
                    thread::sleep(retry);
                }
            }
        }
    }
    Ok(pipeline.finish())
}
