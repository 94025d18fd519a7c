//! The work each stage performs on a job, shared by both runners.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::config::PipelineConfig;
use super::job::{JobStatus, PipelineJob};
use crate::annotation::{write_annotation_xml, AnnotationDoc};
use crate::detect::{binarize, detect_tile_batch, Affinity, Detector, Gate, GateDecision, TileBatch};
use crate::error::{Context, Error, Result};
use crate::hpf::find_best_hpf;
use crate::postprocess::{process_slide, Connectivity, PostprocessParams};
use crate::raster::BinaryMask;
use crate::store::{RecordStatus, ResultRecord, ResultStore, StageTimings};
use crate::synth::{GateLabel, SlideDir};
use crate::tissue::{detect_tissue, tissue_tiles, RefineParams, TileParams};
use crate::units::hpf_geometry;

/// Where a run writes its outputs.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub out_dir: PathBuf,
    pub buffer_dir: PathBuf,
    pub annotations_dir: PathBuf,
    pub metrics_dir: PathBuf,
    pub results_path: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path, buffer_dir: Option<&Path>) -> Result<Self> {
        let paths = Self {
            out_dir: out_dir.to_path_buf(),
            buffer_dir: buffer_dir.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join("buffer")),
            annotations_dir: out_dir.join("annotations"),
            metrics_dir: out_dir.join("metrics"),
            results_path: out_dir.join("results.jsonl"),
        };
        for dir in [&paths.buffer_dir, &paths.annotations_dir, &paths.metrics_dir] {
            fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
        }
        Ok(paths)
    }
}

/// Binary masks of every tissue tile of one slide.
#[derive(Debug, Clone)]
pub struct TileMasks {
    pub masks: Vec<((u32, u32), BinaryMask)>,
    pub batches: usize,
}

#[derive(Debug, Clone)]
pub enum Inference {
    NoCount(GateDecision),
    Masks(TileMasks),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostOutcome {
    pub mf_total: usize,
    pub hpf_count: Option<usize>,
    pub xml_path: PathBuf,
}

pub struct StageWork {
    pub config: PipelineConfig,
    pub paths: RunPaths,
    pub store: ResultStore,
    gate: Box<dyn Gate>,
    detector: Box<dyn Detector>,
    single_worker: Mutex<()>,
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).context(|| format!("creating {}", to.display()))?;
    for entry in fs::read_dir(from).context(|| format!("reading {}", from.display()))? {
        let entry = entry.context(|| format!("reading {}", from.display()))?;
        let target = to.join(entry.file_name());
        let kind = entry.file_type().context(|| format!("inspecting {}", entry.path().display()))?;
        if kind.is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), &target).context(|| format!("copying {}", entry.path().display()))?;
        }
    }
    Ok(())
}

impl StageWork {
    pub fn new(config: PipelineConfig, paths: RunPaths) -> Result<Self> {
        config.validate()?;
        let store = ResultStore::open(&paths.results_path)?;
        Ok(Self {
            gate: config.gate.build(),
            detector: config.detector.build()?,
            config,
            paths,
            store,
            single_worker: Mutex::new(()),
        })
    }

    pub fn detector(&self) -> &dyn Detector {
        self.detector.as_ref()
    }

    pub fn local_dir(&self, job: &PipelineJob) -> PathBuf {
        self.paths.buffer_dir.join(format!("{:06}-{}", job.job_id, job.slide_id))
    }

    /// Copies the slide into the local buffer and opens it there.
    pub fn download(&self, job: &mut PipelineJob) -> Result<SlideDir> {
        if !job.source_dir.join(crate::synth::MANIFEST_FILE).is_file() {
            return Err(Error::invalid(format!("no slide at {}", job.source_dir.display())));
        }
        let local = self.local_dir(job);
        copy_dir(&job.source_dir, &local)?;
        let slide = SlideDir::open(local)?;
        job.slide_id.clone_from(&slide.manifest.slide_id);
        Ok(slide)
    }

    /// Gate, tissue tiling and batched detection. Reports detector calls
    /// through `job`.
    pub fn infer(&self, job: &mut PipelineJob, slide: &SlideDir) -> Result<Inference> {
        let decision = self.gate.classify(&slide.thumbnail()?, &slide.manifest)?;
        if decision.label == GateLabel::NoCount {
            return Ok(Inference::NoCount(decision));
        }
        let m = &slide.manifest;
        let tissue = detect_tissue(&slide.overview()?, RefineParams::default())?;
        let grid = tissue_tiles(
            &tissue.mask,
            (m.width_px, m.height_px),
            TileParams {
                window_px: m.window_px,
                min_coverage: self.config.tile_coverage,
                ..TileParams::default()
            },
        )?;
        job.tiles_total = grid.tiles.len();
        let mut masks = Vec::with_capacity(grid.tiles.len());
        let mut batches = 0;
        for chunk in grid.tiles.chunks(self.config.batch_size) {
            let images = chunk.iter().map(|&(x, y)| slide.tile(x, y)).collect::<Result<Vec<_>>>()?;
            let batch = TileBatch::new(images, chunk.to_vec(), m)?;
            let probs = {
                let _guard = (self.detector.affinity() == Affinity::SingleWorker)
                    .then(|| self.single_worker.lock().unwrap_or_else(|p| p.into_inner()));
                job.detector_calls += 1;
                detect_tile_batch(&batch, self.detector.as_ref())?
            };
            batches += 1;
            for (&offset, prob) in chunk.iter().zip(&probs) {
                masks.push((offset, binarize(prob, self.config.binarize_threshold)?));
            }
            job.tiles_done += chunk.len();
        }
        Ok(Inference::Masks(TileMasks { masks, batches }))
    }

    pub fn postprocess_params(&self) -> PostprocessParams {
        PostprocessParams {
            min_width_um: self.config.min_width_um,
            max_interpolar_um: self.config.max_interpolar_um,
            connectivity: Connectivity::Eight,
            local_merge: true,
            global_merge: true,
        }
    }

    /// Figures, 10HPF and the annotation file for one slide.
    pub fn postprocess(&self, slide: &SlideDir, masks: &TileMasks) -> Result<PostOutcome> {
        let mpp = slide.manifest.mpp;
        let figures = process_slide(&masks.masks, mpp, &self.postprocess_params())?;
        let hpf = if figures.centers.is_empty() {
            None
        } else {
            Some(find_best_hpf(&figures.centers, &hpf_geometry(mpp))?)
        };
        let doc = AnnotationDoc::from_results(&slide.manifest.slide_id, mpp, &figures, hpf.as_ref());
        let xml_path = self.paths.annotations_dir.join(format!("{}.xml", slide.manifest.slide_id));
        write_annotation_xml(&doc, &xml_path)?;
        Ok(PostOutcome {
            mf_total: figures.centers.len(),
            hpf_count: hpf.map(|h| h.count),
            xml_path,
        })
    }

    pub fn record(&self, job: &PipelineJob, status: RecordStatus, total_s: f64) -> Result<()> {
        use super::config::Stage;
        let record = ResultRecord {
            slide_id: job.slide_id.clone(),
            status,
            mf_total: (status == RecordStatus::Counted).then_some(job.mf_total).flatten(),
            hpf_count: (status == RecordStatus::Counted).then_some(job.hpf_count).flatten(),
            timings: StageTimings {
                download_s: job.stage_time(Stage::Download),
                inference_s: job.stage_time(Stage::Inference),
                postprocess_s: job.stage_time(Stage::Postprocess),
                total_s,
            },
            tiles: job.tiles_total,
            detector_calls: job.detector_calls,
            reason: job.reason.clone(),
        };
        self.store.append(&record)
    }

    /// Records the job's outcome and moves it to `status` at `now`. A store
    /// failure turns a successful job into a failed one.
    pub fn conclude(&self, job: &mut PipelineJob, status: JobStatus, now: f64) {
        let total = now - job.queued_at();
        match status {
            JobStatus::Done | JobStatus::GatedNoCount => {
                let kind = if status == JobStatus::Done {
                    RecordStatus::Counted
                } else {
                    RecordStatus::NoCount
                };
                match self.record(job, kind, total) {
                    Ok(()) => {
                        if let Err(e) = job.advance(status, now) {
                            job.fail(e.to_string(), now);
                        }
                    }
                    Err(e) => job.fail(format!("result store: {e}"), now),
                }
            }
            _ => {
                job.fail("unspecified failure", now);
                if let Err(e) = self.record(job, RecordStatus::Failed, total) {
                    log::warn!("could not record failure of job {}: {e}", job.job_id);
                }
            }
        }
        self.release(job);
    }

    pub fn release(&self, job: &PipelineJob) {
        if !self.config.keep_buffer {
            let _ = fs::remove_dir_all(self.local_dir(job));
        }
    }
}
