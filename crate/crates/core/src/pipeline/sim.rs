//! Virtual-time runner.
//!
//! Stage work runs for real, one job at a time on the calling thread, but
//! the clock advances by modeled service times derived from what the work
//! produced (tiles, batches). Results and timings are therefore
//! reproducible for a fixed workload and configuration.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use super::config::{RunMode, ServiceModel, Stage, SubmitPolicy};
use super::job::{JobSource, JobStatus, PipelineJob};
use super::metrics::{PipelineMetrics, StageTally};
use super::stages::{Inference, StageWork, TileMasks};
use crate::error::Result;
use crate::synth::SlideDir;

enum Item {
    Download(PipelineJob),
    Infer(PipelineJob, SlideDir),
    Post(PipelineJob, SlideDir, TileMasks),
}

impl Item {
    fn into_job(self) -> PipelineJob {
        match self {
            Item::Download(j) | Item::Infer(j, _) | Item::Post(j, _, _) => j,
        }
    }
}

enum Outcome {
    Forward(Box<Item>),
    Conclude(PipelineJob, JobStatus),
}

#[derive(Default)]
struct Worker {
    alive: bool,
    busy: bool,
    handled: usize,
    pending: Option<Outcome>,
}

#[derive(Clone, Copy)]
enum Event {
    Arrival(usize),
    Done(Stage, usize),
}

struct Sim<'a> {
    work: &'a StageWork,
    model: ServiceModel,
    now: f64,
    seq: u64,
    events: BinaryHeap<Reverse<(u64, u64, usize)>>,
    payloads: Vec<Event>,
    queues: [VecDeque<Item>; 3],
    caps: [usize; 3],
    workers: [Vec<Worker>; 3],
    /// Workers holding finished work for a full downstream queue, in the
    /// order they blocked.
    blocked: [VecDeque<(usize, Item)>; 3],
    waiting: VecDeque<PipelineJob>,
    next_id: u64,
    finished: Vec<PipelineJob>,
    tallies: [StageTally; 3],
    depth: [Vec<(f64, usize)>; 3],
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, at: f64, event: Event) {
        self.payloads.push(event);
        // non-negative finite floats order like their bit patterns
        self.events.push(Reverse((at.max(0.0).to_bits(), self.seq, self.payloads.len() - 1)));
        self.seq += 1;
    }

    fn stage_alive(&self, s: usize) -> bool {
        self.workers[s].iter().any(|w| w.alive)
    }

    fn note_depth(&mut self, s: usize) {
        assert!(self.queues[s].len() <= self.caps[s], "virtual queue over capacity");
        let entry = (self.now, self.queues[s].len());
        self.depth[s].push(entry);
    }

    fn conclude(&mut self, mut job: PipelineJob, status: JobStatus) {
        self.work.conclude(&mut job, status, self.now);
        self.finished.push(job);
    }

    fn fail(&mut self, mut job: PipelineJob, reason: String) {
        job.fail(reason, self.now);
        self.conclude(job, JobStatus::Failed);
    }

    fn new_job(&mut self, src: &JobSource) -> PipelineJob {
        let job = PipelineJob::new(self.next_id, src.source_dir.clone(), self.now);
        self.next_id += 1;
        job
    }

    /// Runs the real work of `stage` on `item` and models its duration.
    fn run_stage(&mut self, stage: Stage, item: Item, worker: usize) -> (f64, Outcome) {
        let m = self.model;
        let crash = self.work.config.crash.is_some_and(|c| {
            c.stage == stage && c.worker == worker && c.after_jobs == self.workers[stage.index()][worker].handled
        });
        let start = self.now;
        match item {
            Item::Download(mut job) => {
                let _ = job.advance(JobStatus::Downloading, start);
                if crash {
                    return (0.0, self.crashed(job, stage, worker));
                }
                match self.work.download(&mut job) {
                    Ok(slide) => {
                        let tiles = slide.manifest.tiles.len() as f64;
                        let d = m.network_latency_s + m.download_base_s + m.download_per_tile_s * tiles;
                        job.spans.push((stage, start, start + d));
                        (d, Outcome::Forward(Box::new(Item::Infer(job, slide))))
                    }
                    Err(e) => {
                        let d = m.network_latency_s + m.download_base_s;
                        job.spans.push((stage, start, start + d));
                        job.reason = Some(format!("download: {e}"));
                        (d, Outcome::Conclude(job, JobStatus::Failed))
                    }
                }
            }
            Item::Infer(mut job, slide) => {
                let _ = job.advance(JobStatus::Inferring, start);
                if crash {
                    return (0.0, self.crashed(job, stage, worker));
                }
                let result = self.work.infer(&mut job, &slide);
                let d = m.gate_s + m.batch_s * job.detector_calls as f64;
                job.spans.push((stage, start, start + d));
                let outcome = match result {
                    Ok(Inference::NoCount(_)) => Outcome::Conclude(job, JobStatus::GatedNoCount),
                    Ok(Inference::Masks(masks)) => Outcome::Forward(Box::new(Item::Post(job, slide, masks))),
                    Err(e) => {
                        job.reason = Some(format!("inference: {e}"));
                        Outcome::Conclude(job, JobStatus::Failed)
                    }
                };
                (d, outcome)
            }
            Item::Post(mut job, slide, masks) => {
                let _ = job.advance(JobStatus::PostProcessing, start);
                if crash {
                    return (0.0, self.crashed(job, stage, worker));
                }
                let d = m.postprocess_base_s + m.postprocess_per_tile_s * masks.masks.len() as f64;
                job.spans.push((stage, start, start + d));
                let outcome = match self.work.postprocess(&slide, &masks) {
                    Ok(o) => {
                        job.mf_total = Some(o.mf_total);
                        job.hpf_count = o.hpf_count;
                        Outcome::Conclude(job, JobStatus::Done)
                    }
                    Err(e) => {
                        job.reason = Some(format!("post-processing: {e}"));
                        Outcome::Conclude(job, JobStatus::Failed)
                    }
                };
                (d, outcome)
            }
        }
    }

    fn crashed(&mut self, mut job: PipelineJob, stage: Stage, worker: usize) -> Outcome {
        self.workers[stage.index()][worker].alive = false;
        job.spans.push((stage, self.now, self.now));
        job.reason = Some(format!("{} worker {worker} crashed", stage.name()));
        Outcome::Conclude(job, JobStatus::Failed)
    }

    /// Fails everything bound for a stage that has no live worker left.
    fn drain_dead(&mut self) -> bool {
        let mut progress = false;
        for s in 0..3 {
            if self.stage_alive(s) {
                continue;
            }
            let reason = format!("no {} worker left", Stage::ALL[s].name());
            while let Some(item) = self.queues[s].pop_front() {
                self.note_depth(s);
                self.fail(item.into_job(), reason.clone());
                progress = true;
            }
            if s == 0 {
                while let Some(job) = self.waiting.pop_front() {
                    self.fail(job, reason.clone());
                    progress = true;
                }
            } else {
                while let Some((w, item)) = self.blocked[s - 1].pop_front() {
                    self.workers[s - 1][w].busy = false;
                    self.fail(item.into_job(), reason.clone());
                    progress = true;
                }
            }
        }
        progress
    }

    /// Moves work forward at the current instant until nothing changes.
    fn pump(&mut self) {
        loop {
            let mut progress = self.drain_dead();
            for s in 0..3 {
                while self.queues[s].len() < self.caps[s] {
                    let item = if s == 0 {
                        match self.waiting.pop_front() {
                            Some(job) => Item::Download(job),
                            None => break,
                        }
                    } else {
                        match self.blocked[s - 1].pop_front() {
                            Some((w, item)) => {
                                self.workers[s - 1][w].busy = false;
                                item
                            }
                            None => break,
                        }
                    };
                    self.queues[s].push_back(item);
                    self.note_depth(s);
                    progress = true;
                }
            }
            for (s, stage) in Stage::ALL.into_iter().enumerate() {
                for w in 0..self.workers[s].len() {
                    let worker = &self.workers[s][w];
                    if !worker.alive || worker.busy {
                        continue;
                    }
                    let Some(item) = self.queues[s].pop_front() else { break };
                    self.note_depth(s);
                    let (d, outcome) = self.run_stage(stage, item, w);
                    let worker = &mut self.workers[s][w];
                    worker.handled += 1;
                    worker.busy = true;
                    worker.pending = Some(outcome);
                    self.tallies[s].busy_s += d;
                    self.tallies[s].processed += 1;
                    let at = self.now + d;
                    self.schedule(at, Event::Done(stage, w));
                    progress = true;
                }
            }
            if !progress {
                break;
            }
        }
    }

    fn on_done(&mut self, stage: Stage, w: usize) {
        let s = stage.index();
        let outcome = self.workers[s][w].pending.take().expect("done event for a busy worker");
        match outcome {
            Outcome::Conclude(job, status) => {
                self.workers[s][w].busy = false;
                self.conclude(job, status);
            }
            Outcome::Forward(item) => {
                let item = *item;
                if self.queues[s + 1].len() < self.caps[s + 1] && self.blocked[s].is_empty() {
                    self.workers[s][w].busy = false;
                    self.queues[s + 1].push_back(item);
                    self.note_depth(s + 1);
                } else {
                    // stays busy until downstream has room
                    self.blocked[s].push_back((w, item));
                }
            }
        }
    }
}

/// Runs the sources through the pipeline on a virtual clock.
pub fn run_virtual(work: &StageWork, sources: &[JobSource]) -> Result<PipelineMetrics> {
    let cfg = &work.config;
    let workers = [cfg.workers.download, cfg.workers.inference, cfg.workers.postprocess];
    let caps = [cfg.queues.download, cfg.queues.inference, cfg.queues.postprocess];
    let mk = |n: usize| {
        (0..n)
            .map(|_| Worker {
                alive: true,
                ..Worker::default()
            })
            .collect::<Vec<_>>()
    };
    let mut sim = Sim {
        work,
        model: cfg.service,
        now: 0.0,
        seq: 0,
        events: BinaryHeap::new(),
        payloads: Vec::new(),
        queues: Default::default(),
        caps,
        workers: [mk(workers[0]), mk(workers[1]), mk(workers[2])],
        blocked: Default::default(),
        waiting: VecDeque::new(),
        next_id: 1,
        finished: Vec::new(),
        tallies: Default::default(),
        depth: [vec![(0.0, 0)], vec![(0.0, 0)], vec![(0.0, 0)]],
    };
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.sort_by(|&a, &b| sources[a].arrival_s.total_cmp(&sources[b].arrival_s).then(a.cmp(&b)));
    for i in order {
        sim.schedule(sources[i].arrival_s, Event::Arrival(i));
    }
    while let Some(Reverse((bits, _, idx))) = sim.events.pop() {
        sim.now = f64::from_bits(bits);
        match sim.payloads[idx] {
            Event::Arrival(i) => match cfg.submit {
                SubmitPolicy::Block => {
                    let job = sim.new_job(&sources[i]);
                    sim.waiting.push_back(job);
                }
                SubmitPolicy::Retry => {
                    if sim.queues[0].len() < sim.caps[0] || !sim.stage_alive(0) {
                        let job = sim.new_job(&sources[i]);
                        sim.waiting.push_back(job);
                    } else {
                        let at = sim.now + cfg.retry_after_s;
                        sim.schedule(at, Event::Arrival(i));
                    }
                }
            },
            Event::Done(stage, w) => sim.on_done(stage, w),
        }
        sim.pump();
    }
    Ok(PipelineMetrics::build(
        RunMode::Virtual,
        sim.finished,
        sim.tallies,
        sim.depth,
        workers,
        caps,
    ))
}
