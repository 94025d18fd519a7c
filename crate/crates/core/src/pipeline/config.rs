//! Pipeline and workload configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::{DetectorSpec, GateSpec, DEFAULT_BINARIZE_THRESHOLD, MAX_BATCH};
use crate::error::{Context, Error, Result};
use crate::postprocess::{DEFAULT_MAX_INTERPOLAR_UM, DEFAULT_MIN_WIDTH_UM};

pub const ENV_OUT_DIR: &str = "MITOCOUNT_OUT_DIR";
pub const ENV_DOWNLOAD_WORKERS: &str = "MITOCOUNT_DOWNLOAD_WORKERS";
pub const ENV_INFERENCE_WORKERS: &str = "MITOCOUNT_INFERENCE_WORKERS";
pub const ENV_POSTPROCESS_WORKERS: &str = "MITOCOUNT_POSTPROCESS_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Download,
    Inference,
    Postprocess,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Download, Stage::Inference, Stage::Postprocess];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Download => "download",
            Stage::Inference => "inference",
            Stage::Postprocess => "postprocess",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    WallClock,
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitPolicy {
    /// The submitter waits for queue space.
    #[default]
    Block,
    /// The submitter is refused and retries after `retry_after_s`.
    Retry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerCounts {
    pub download: usize,
    pub inference: usize,
    pub postprocess: usize,
}

impl Default for WorkerCounts {
    fn default() -> Self {
        Self {
            download: 1,
            inference: 1,
            postprocess: 1,
        }
    }
}

impl WorkerCounts {
    pub fn get(&self, stage: Stage) -> usize {
        match stage {
            Stage::Download => self.download,
            Stage::Inference => self.inference,
            Stage::Postprocess => self.postprocess,
        }
    }
}

/// Capacity of the queue feeding each stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueCapacities {
    pub download: usize,
    pub inference: usize,
    pub postprocess: usize,
}

impl Default for QueueCapacities {
    fn default() -> Self {
        Self {
            download: 64,
            inference: 8,
            postprocess: 8,
        }
    }
}

impl QueueCapacities {
    pub fn get(&self, stage: Stage) -> usize {
        match stage {
            Stage::Download => self.download,
            Stage::Inference => self.inference,
            Stage::Postprocess => self.postprocess,
        }
    }
}

/// Modeled service times, in seconds, for virtual-time runs. The network
/// latency is also applied as a real delay in wall-clock runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceModel {
    pub network_latency_s: f64,
    pub download_base_s: f64,
    pub download_per_tile_s: f64,
    pub gate_s: f64,
    pub batch_s: f64,
    pub postprocess_base_s: f64,
    pub postprocess_per_tile_s: f64,
}

impl Default for ServiceModel {
    fn default() -> Self {
        Self {
            network_latency_s: 0.0,
            download_base_s: 0.5,
            download_per_tile_s: 0.001,
            gate_s: 0.05,
            batch_s: 0.4,
            postprocess_base_s: 0.2,
            postprocess_per_tile_s: 0.002,
        }
    }
}

/// Makes one worker fail while holding a job, for isolation tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashInjection {
    pub stage: Stage,
    pub worker: usize,
    /// Jobs the worker completes before crashing on the next one.
    #[serde(default)]
    pub after_jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: RunMode,
    pub workers: WorkerCounts,
    pub queues: QueueCapacities,
    pub batch_size: usize,
    pub detector: DetectorSpec,
    pub gate: GateSpec,
    pub binarize_threshold: f32,
    pub min_width_um: f64,
    pub max_interpolar_um: f64,
    pub tile_coverage: f64,
    pub submit: SubmitPolicy,
    pub retry_after_s: f64,
    pub service: ServiceModel,
    pub crash: Option<CrashInjection>,
    pub keep_buffer: bool,
    pub out_dir: Option<PathBuf>,
    pub buffer_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::WallClock,
            workers: WorkerCounts::default(),
            queues: QueueCapacities::default(),
            batch_size: MAX_BATCH,
            detector: DetectorSpec::default(),
            gate: GateSpec::default(),
            binarize_threshold: DEFAULT_BINARIZE_THRESHOLD,
            min_width_um: DEFAULT_MIN_WIDTH_UM,
            max_interpolar_um: DEFAULT_MAX_INTERPOLAR_UM,
            tile_coverage: 0.05,
            submit: SubmitPolicy::Block,
            retry_after_s: 0.05,
            service: ServiceModel::default(),
            crash: None,
            keep_buffer: false,
            out_dir: None,
            buffer_dir: None,
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn non_negative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Applies `MITOCOUNT_*` environment overrides from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(dir) = lookup(ENV_OUT_DIR) {
            self.out_dir = Some(PathBuf::from(dir));
        }
        for (key, slot) in [
            (ENV_DOWNLOAD_WORKERS, &mut self.workers.download),
            (ENV_INFERENCE_WORKERS, &mut self.workers.inference),
            (ENV_POSTPROCESS_WORKERS, &mut self.workers.postprocess),
        ] {
            if let Some(raw) = lookup(key) {
                *slot = raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(format!("{key}=`{raw}` is not a worker count")))?;
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        for stage in Stage::ALL {
            if self.workers.get(stage) == 0 {
                return Err(Error::config(format!("{} needs at least one worker", stage.name())));
            }
            if self.queues.get(stage) == 0 {
                return Err(Error::config(format!("{} queue capacity must be positive", stage.name())));
            }
        }
        if self.batch_size == 0 || self.batch_size > MAX_BATCH {
            return Err(Error::config(format!("batch_size must be in 1..={MAX_BATCH}")));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::config("binarize_threshold must be in (0,1)"));
        }
        if !non_negative(self.min_width_um) || !non_negative(self.max_interpolar_um) {
            return Err(Error::config("micron thresholds must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.tile_coverage) {
            return Err(Error::config("tile_coverage must be in [0,1]"));
        }
        if !positive(self.retry_after_s) {
            return Err(Error::config("retry_after_s must be positive"));
        }
        let s = &self.service;
        let times = [
            s.network_latency_s,
            s.download_base_s,
            s.download_per_tile_s,
            s.gate_s,
            s.batch_s,
            s.postprocess_base_s,
            s.postprocess_per_tile_s,
        ];
        if !times.iter().all(|&t| non_negative(t)) {
            return Err(Error::config("service times must be non-negative"));
        }
        if let Some(c) = self.crash {
            if c.worker >= self.workers.get(c.stage) {
                return Err(Error::config(format!(
                    "crash worker {} does not exist in {}",
                    c.worker,
                    c.stage.name()
                )));
            }
        }
        self.detector.build().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ArrivalModel {
    /// Everything submitted at time zero.
    Immediate,
    /// Exponential inter-arrival times at `slides_per_day`, optionally
    /// overridden.
    Poisson {
        #[serde(default)]
        rate_per_s: Option<f64>,
    },
    /// Explicit submission times in seconds, one per slide.
    Trace { times_s: Vec<f64> },
}

/// The slides fed to a run. Defaults follow the production workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub slides: usize,
    pub slides_per_day: u32,
    pub count_ratio: f64,
    pub tiles_per_slide: u32,
    pub batch_size: usize,
    pub arrival: ArrivalModel,
    pub seed: u64,
    pub mpp: f64,
    pub figures_per_slide: usize,
    pub specks_per_slide: usize,
    pub pairs_per_slide: usize,
    pub pair_gap_um: f64,
    /// Real-time seconds per workload second when a wall-clock run honors
    /// arrival times; 0 submits as fast as the queue allows.
    pub time_scale: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            slides: 100,
            slides_per_day: 3323,
            count_ratio: 0.35,
            tiles_per_slide: 8164,
            batch_size: MAX_BATCH,
            arrival: ArrivalModel::Immediate,
            seed: 0,
            mpp: 0.25,
            figures_per_slide: 5,
            specks_per_slide: 1,
            pairs_per_slide: 1,
            pair_gap_um: 10.0,
            time_scale: 0.0,
        }
    }
}

impl WorkloadSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let w: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.count_ratio > 0.0 && self.count_ratio <= 1.0) {
            return Err(Error::config("count_ratio must be in (0,1]"));
        }
        if self.slides == 0 || self.slides_per_day == 0 || self.tiles_per_slide == 0 || self.batch_size == 0 {
            return Err(Error::config("workload counts must be positive"));
        }
        if self.batch_size > MAX_BATCH {
            return Err(Error::config(format!("batch_size must be at most {MAX_BATCH}")));
        }
        if !positive(self.mpp) || !non_negative(self.pair_gap_um) || !non_negative(self.time_scale) {
            return Err(Error::config("mpp, pair_gap_um and time_scale must be valid"));
        }
        match &self.arrival {
            ArrivalModel::Poisson { rate_per_s: Some(r) } if !positive(*r) => {
                Err(Error::config("poisson rate must be positive"))
            }
            ArrivalModel::Trace { times_s } if times_s.len() != self.slides => Err(Error::config(format!(
                "trace has {} times for {} slides",
                times_s.len(),
                self.slides
            ))),
            ArrivalModel::Trace { times_s } if !times_s.iter().all(|&t| non_negative(t)) => {
                Err(Error::config("trace times must be non-negative"))
            }
            _ => Ok(()),
        }
    }

    /// Slide grid (cols, rows) holding at least `tiles_per_slide` windows.
    pub fn grid(&self) -> (u32, u32) {
        let cols = (f64::from(self.tiles_per_slide).sqrt().ceil() as u32).max(1);
        (cols, self.tiles_per_slide.div_ceil(cols))
    }
}
