//! Python bindings. Points cross the boundary as `(x, y)` tuples in
//! full-resolution pixels; errors surface as `ValueError` (bad input, config
//! or XML), `OSError` (files) or `RuntimeError` (everything else).

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mitocount_core::annotation::{read_annotation_xml, AnnotationDoc};
use mitocount_core::detect::{export_planted_masks, load_mask_dir, DEFAULT_BINARIZE_THRESHOLD};
use mitocount_core::pipeline::{run_pipeline as run_core_pipeline, PipelineConfig, WorkloadSpec};
use mitocount_core::postprocess::{merge_global as merge_core, process_slide, PostprocessParams};
use mitocount_core::store::{RecordStatus, ResultRecord, ResultStore};
use mitocount_core::synth::{gen_synthetic_slide, SlideSpec};
use mitocount_core::tissue::otsu_threshold as otsu_core;
use mitocount_core::units::{hpf_geometry as core_geometry, MicronsPerPixel, Point2};
use mitocount_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::Xml { .. } => PyValueError::new_err(e.to_string()),
        Error::Io { .. } | Error::Image { .. } => PyOSError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn mpp(v: f64) -> PyResult<MicronsPerPixel> {
    MicronsPerPixel::new(v).map_err(py_err)
}

fn points(raw: Vec<(f64, f64)>) -> Vec<Point2> {
    raw.into_iter().map(|(x, y)| Point2::new(x, y)).collect()
}

type PyPoints = Vec<(f64, f64)>;
/// `(slide_id, status, mf_total, hpf_count)`
type RecordRow = (String, &'static str, Option<usize>, Option<usize>);

#[pyclass(frozen, get_all, module = "mitocount")]
#[derive(Clone)]
pub struct HpfRegion {
    /// `None` when no points were given.
    center: Option<(f64, f64)>,
    radius_px: f64,
    count: usize,
    member_ids: Vec<usize>,
}

#[pymethods]
impl HpfRegion {
    fn __repr__(&self) -> String {
        let center = match self.center {
            Some((x, y)) => format!("({x:.3}, {y:.3})"),
            None => "None".into(),
        };
        format!("HpfRegion(center={center}, count={})", self.count)
    }
}

impl From<mitocount_core::HpfRegion> for HpfRegion {
    fn from(r: mitocount_core::HpfRegion) -> Self {
        Self {
            center: r.center.map(|c| (c.x, c.y)),
            radius_px: r.radius_px,
            count: r.count,
            member_ids: r.member_ids,
        }
    }
}

/// Side and half side in pixels of the 2.37 mm² square region.
#[pyfunction]
fn hpf_geometry(microns_per_pixel: f64) -> PyResult<(f64, f64)> {
    let g = core_geometry(mpp(microns_per_pixel)?);
    Ok((g.side_px, g.radius_px))
}

#[pyfunction]
fn find_best_hpf(pts: Vec<(f64, f64)>, microns_per_pixel: f64) -> PyResult<HpfRegion> {
    let g = core_geometry(mpp(microns_per_pixel)?);
    mitocount_core::find_best_hpf(&points(pts), &g).map(Into::into).map_err(py_err)
}

#[pyfunction]
fn brute_force_best_hpf(pts: Vec<(f64, f64)>, microns_per_pixel: f64) -> PyResult<HpfRegion> {
    let g = core_geometry(mpp(microns_per_pixel)?);
    mitocount_core::brute_force_best_hpf(&points(pts), &g).map(Into::into).map_err(py_err)
}

#[pyfunction]
fn candidate_centers(pts: Vec<(f64, f64)>, radius_px: f64) -> PyResult<Vec<(f64, f64)>> {
    let c = mitocount_core::candidate_centers(&points(pts), radius_px).map_err(py_err)?;
    Ok(c.into_iter().map(|p| (p.x, p.y)).collect())
}

/// Returns `(centers, clusters)` with clusters as lists of input indices.
#[pyfunction]
#[pyo3(signature = (pts, microns_per_pixel, max_interpolar_um = 15.0))]
fn merge_global(
    pts: Vec<(f64, f64)>,
    microns_per_pixel: f64,
    max_interpolar_um: f64,
) -> PyResult<(PyPoints, Vec<Vec<usize>>)> {
    let m = merge_core(&points(pts), mpp(microns_per_pixel)?, max_interpolar_um).map_err(py_err)?;
    Ok((m.centers.iter().map(|p| (p.x, p.y)).collect(), m.clusters))
}

#[pyfunction]
fn otsu_threshold(histogram: Vec<u64>) -> PyResult<u8> {
    otsu_core(&histogram).map(|t| t.threshold).map_err(py_err)
}

#[pyclass(frozen, get_all, module = "mitocount")]
#[derive(Clone)]
pub struct Figure {
    id: u32,
    x: f64,
    y: f64,
    width_um: f64,
    contour: Vec<(f64, f64)>,
}

#[pymethods]
impl Figure {
    fn __repr__(&self) -> String {
        format!("Figure(id={}, x={:.3}, y={:.3}, width_um={:.3})", self.id, self.x, self.y, self.width_um)
    }
}

#[pyclass(frozen, module = "mitocount")]
pub struct Annotation(AnnotationDoc);

#[pymethods]
impl Annotation {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        read_annotation_xml(&path).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_xml(text: &str) -> PyResult<Self> {
        AnnotationDoc::from_xml_str(text).map(Self).map_err(py_err)
    }

    fn to_xml(&self) -> PyResult<String> {
        self.0.to_xml_string().map_err(py_err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        mitocount_core::annotation::write_annotation_xml(&self.0, &path).map_err(py_err)
    }

    #[getter]
    fn slide_id(&self) -> &str {
        &self.0.slide_id
    }

    #[getter]
    fn mpp(&self) -> f64 {
        self.0.mpp.value()
    }

    #[getter]
    fn figures(&self) -> Vec<Figure> {
        self.0
            .figures
            .iter()
            .map(|f| Figure {
                id: f.id,
                x: f.x,
                y: f.y,
                width_um: f.width_um,
                contour: f.contour.iter().map(|p| (p.x, p.y)).collect(),
            })
            .collect()
    }

    /// `(x, y, side_px, count, member_ids)` or `None`.
    #[getter]
    fn hpf(&self) -> Option<(f64, f64, f64, usize, Vec<u32>)> {
        self.0.hpf.as_ref().map(|h| (h.x, h.y, h.side_px, h.count, h.members.clone()))
    }

    fn __repr__(&self) -> String {
        format!("Annotation(slide_id='{}', figures={})", self.0.slide_id, self.0.figures.len())
    }
}

/// Runs the mask postprocessing on a directory of `tile_<x>_<y>.png` masks.
#[pyfunction]
#[pyo3(signature = (masks_dir, microns_per_pixel, slide_id = "slide", threshold = DEFAULT_BINARIZE_THRESHOLD))]
fn postprocess_masks(masks_dir: PathBuf, microns_per_pixel: f64, slide_id: &str, threshold: f32) -> PyResult<Annotation> {
    let m = mpp(microns_per_pixel)?;
    let tiles = load_mask_dir(&masks_dir, threshold).map_err(py_err)?;
    let figures = process_slide(&tiles, m, &PostprocessParams::default()).map_err(py_err)?;
    let hpf = if figures.centers.is_empty() {
        None
    } else {
        Some(mitocount_core::find_best_hpf(&figures.centers, &core_geometry(m)).map_err(py_err)?)
    };
    Ok(Annotation(AnnotationDoc::from_results(slide_id, m, &figures, hpf.as_ref())))
}

#[pyclass(frozen, get_all, module = "mitocount")]
pub struct Slide {
    path: PathBuf,
    slide_id: String,
    width_px: u32,
    height_px: u32,
    tiles: usize,
    planted: usize,
    expected_count: usize,
}

#[pymethods]
impl Slide {
    fn __repr__(&self) -> String {
        format!("Slide(slide_id='{}', tiles={}, expected_count={})", self.slide_id, self.tiles, self.expected_count)
    }
}

/// Writes a synthetic slide under `out_dir`; `with_masks` also exports the
/// planted figures as masks under `<slide>/masks`.
#[pyfunction]
#[pyo3(signature = (slide_id, width_px, height_px, out_dir, *, mpp = 0.25, n_figures = 0, n_specks = 0, n_pairs = 0, pair_gap_um = 10.0, seed = 0, blank = false, with_masks = false))]
#[allow(clippy::too_many_arguments)]
fn gen_synthetic(
    slide_id: &str,
    width_px: u32,
    height_px: u32,
    out_dir: PathBuf,
    mpp: f64,
    n_figures: usize,
    n_specks: usize,
    n_pairs: usize,
    pair_gap_um: f64,
    seed: u64,
    blank: bool,
    with_masks: bool,
) -> PyResult<Slide> {
    let spec = SlideSpec {
        mpp,
        n_figures,
        n_specks,
        n_pairs,
        pair_gap_um,
        seed,
        blank,
        ..SlideSpec::new(slide_id, width_px, height_px)
    };
    let dir = gen_synthetic_slide(&spec, &out_dir).map_err(py_err)?;
    let m = &dir.manifest;
    if with_masks {
        export_planted_masks(m, &dir.dir.join("masks")).map_err(py_err)?;
    }
    Ok(Slide {
        path: dir.dir.clone(),
        slide_id: m.slide_id.clone(),
        width_px: m.width_px,
        height_px: m.height_px,
        tiles: m.tiles.len(),
        planted: m.ground_truth.len(),
        expected_count: m.expected_count(15.0),
    })
}

/// Runs a workload through the pipeline; returns the summary text and one
/// dict per slide.
#[pyfunction]
fn run_pipeline<'py>(
    py: Python<'py>,
    config_path: PathBuf,
    workload_path: PathBuf,
    out_dir: PathBuf,
) -> PyResult<(String, Vec<Bound<'py, pyo3::types::PyDict>>)> {
    let cfg = PipelineConfig::load(&config_path).map_err(py_err)?;
    let workload = WorkloadSpec::load(&workload_path).map_err(py_err)?;
    let metrics = py
        .detach(|| run_core_pipeline(&cfg, &workload, &out_dir))
        .map_err(py_err)?;
    let mut jobs = Vec::with_capacity(metrics.jobs.len());
    for j in &metrics.jobs {
        let d = pyo3::types::PyDict::new(py);
        d.set_item("slide_id", &j.slide_id)?;
        d.set_item("status", j.status.name())?;
        d.set_item("mf_total", j.mf_total)?;
        d.set_item("hpf_count", j.hpf_count)?;
        d.set_item("tiles", j.tiles)?;
        d.set_item("detector_calls", j.detector_calls)?;
        d.set_item("wall_s", j.wall_s)?;
        jobs.push(d);
    }
    Ok((metrics.summary(), jobs))
}

#[pyclass(module = "mitocount")]
pub struct Store(ResultStore);

#[pymethods]
impl Store {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        ResultStore::open(path).map(Self).map_err(py_err)
    }

    /// `status` is one of `counted`, `no-count`, `failed`.
    #[pyo3(signature = (slide_id, status, mf_total = None, hpf_count = None, reason = None))]
    fn append(
        &self,
        slide_id: &str,
        status: &str,
        mf_total: Option<usize>,
        hpf_count: Option<usize>,
        reason: Option<String>,
    ) -> PyResult<()> {
        let rec = match status {
            "counted" => ResultRecord::counted(slide_id, mf_total.unwrap_or(0), hpf_count),
            "no-count" => ResultRecord::no_count(slide_id),
            "failed" => ResultRecord::failed(slide_id, reason.unwrap_or_default()),
            other => return Err(PyValueError::new_err(format!("unknown status {other:?}"))),
        };
        self.0.append(&rec).map_err(py_err)
    }

    /// Records as `(slide_id, status, mf_total, hpf_count)` in insertion order.
    fn scan(&self) -> PyResult<Vec<RecordRow>> {
        let records = self.0.scan_all().map_err(py_err)?;
        Ok(records
            .into_iter()
            .map(|r| {
                let status = match r.status {
                    RecordStatus::Counted => "counted",
                    RecordStatus::NoCount => "no-count",
                    RecordStatus::Failed => "failed",
                };
                (r.slide_id, status, r.mf_total, r.hpf_count)
            })
            .collect())
    }
}

#[pymodule]
pub fn mitocount(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<HpfRegion>()?;
    m.add_class::<Figure>()?;
    m.add_class::<Annotation>()?;
    m.add_class::<Slide>()?;
    m.add_class::<Store>()?;
    m.add_function(wrap_pyfunction!(hpf_geometry, m)?)?;
    m.add_function(wrap_pyfunction!(find_best_hpf, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_best_hpf, m)?)?;
    m.add_function(wrap_pyfunction!(candidate_centers, m)?)?;
    m.add_function(wrap_pyfunction!(merge_global, m)?)?;
    m.add_function(wrap_pyfunction!(otsu_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(postprocess_masks, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
