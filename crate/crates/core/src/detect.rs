//! Slide gate and per-tile mask detectors.
//!
//! The real system runs a slide classifier and a segmentation ensemble here.
//! These are deterministic stand-ins with the same tile-in / mask-out
//! contract.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Context, Error, Result};
use crate::raster::BinaryMask;
use crate::synth::{GateLabel, SlideManifest, THUMBNAIL_PX};
use crate::tissue::{otsu_threshold, refine_mask, rgb_to_lab_l};

pub const MAX_BATCH: usize = 16;
pub const DEFAULT_BINARIZE_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub label: GateLabel,
    pub score: f64,
}

pub trait Gate: Send + Sync {
    fn classify(&self, thumbnail: &RgbImage, slide: &SlideManifest) -> Result<GateDecision>;
}

/// Tissue-fraction and color-spread heuristic on the thumbnail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicGate {
    pub min_tissue_fraction: f64,
    pub saturation_variance_floor: f64,
}

impl Default for HeuristicGate {
    fn default() -> Self {
        Self {
            min_tissue_fraction: 0.02,
            saturation_variance_floor: 5e-4,
        }
    }
}

fn saturation(p: [u8; 3]) -> f64 {
    let max = p.iter().copied().max().unwrap_or(0);
    let min = p.iter().copied().min().unwrap_or(0);
    if max == 0 {
        0.0
    } else {
        f64::from(max - min) / f64::from(max)
    }
}

impl HeuristicGate {
    pub fn tissue_fraction(thumbnail: &RgbImage) -> Result<f64> {
        let l = rgb_to_lab_l(thumbnail)?;
        let otsu = otsu_threshold(&l.histogram())?;
        if otsu.degenerate {
            return Ok(0.0);
        }
        let mask = l.at_or_below(otsu.threshold);
        Ok(mask.count_ones() as f64 / (l.width() * l.height()) as f64)
    }

    pub fn saturation_variance(thumbnail: &RgbImage) -> f64 {
        let n = f64::from(thumbnail.width() * thumbnail.height());
        let (sum, sq) = thumbnail.pixels().fold((0.0, 0.0), |(s, q), p| {
            let v = saturation(p.0);
            (s + v, q + v * v)
        });
        let mean = sum / n;
        (sq / n - mean * mean).max(0.0)
    }

    pub fn decide(&self, thumbnail: &RgbImage) -> Result<GateDecision> {
        if thumbnail.dimensions() != (THUMBNAIL_PX, THUMBNAIL_PX) {
            let (w, h) = thumbnail.dimensions();
            return Err(Error::invalid(format!(
                "gate expects a {THUMBNAIL_PX}x{THUMBNAIL_PX} thumbnail, got {w}x{h}"
            )));
        }
        let fraction = Self::tissue_fraction(thumbnail)?;
        let spread = Self::saturation_variance(thumbnail);
        let label = if fraction < self.min_tissue_fraction || spread < self.saturation_variance_floor {
            GateLabel::NoCount
        } else {
            GateLabel::Count
        };
        Ok(GateDecision {
            label,
            score: fraction.clamp(0.0, 1.0),
        })
    }
}

impl Gate for HeuristicGate {
    fn classify(&self, thumbnail: &RgbImage, _slide: &SlideManifest) -> Result<GateDecision> {
        self.decide(thumbnail)
    }
}

/// Returns the label recorded in the manifest; falls back to the heuristic
/// when the manifest carries none.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PassthroughGate {
    pub fallback: HeuristicGate,
}

impl Gate for PassthroughGate {
    fn classify(&self, thumbnail: &RgbImage, slide: &SlideManifest) -> Result<GateDecision> {
        match slide.gate_truth {
            Some(label) => Ok(GateDecision {
                label,
                score: if label == GateLabel::Count { 1.0 } else { 0.0 },
            }),
            None => self.fallback.decide(thumbnail),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateSpec {
    #[default]
    Heuristic,
    Passthrough,
}

impl GateSpec {
    pub fn build(self) -> Box<dyn Gate> {
        match self {
            GateSpec::Heuristic => Box::new(HeuristicGate::default()),
            GateSpec::Passthrough => Box::new(PassthroughGate::default()),
        }
    }
}

/// Per-pixel figure probability for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ProbMask {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "probability mask {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("probability {v} outside [0,1]")));
        }
        Ok(Self { width, height, values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            values: mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Bit set where the probability is at least `threshold`.
pub fn binarize(mask: &ProbMask, threshold: f32) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("binarize threshold {threshold} not in (0,1)")));
    }
    BinaryMask::new(
        mask.width,
        mask.height,
        mask.values.iter().map(|&v| v >= threshold).collect(),
    )
}

/// Up to [`MAX_BATCH`] equally sized tiles from one slide.
#[derive(Debug, Clone)]
pub struct TileBatch<'a> {
    tiles: Vec<RgbImage>,
    offsets: Vec<(u32, u32)>,
    slide: &'a SlideManifest,
}

impl<'a> TileBatch<'a> {
    pub fn new(tiles: Vec<RgbImage>, offsets: Vec<(u32, u32)>, slide: &'a SlideManifest) -> Result<Self> {
        if tiles.is_empty() || tiles.len() > MAX_BATCH {
            return Err(Error::invalid(format!(
                "batch holds {} tiles; must be 1..={MAX_BATCH}",
                tiles.len()
            )));
        }
        if tiles.len() != offsets.len() {
            return Err(Error::invalid("batch tiles and offsets differ in length"));
        }
        let dims = tiles[0].dimensions();
        if tiles.iter().any(|t| t.dimensions() != dims) {
            return Err(Error::invalid("batch tiles differ in size"));
        }
        Ok(Self { tiles, offsets, slide })
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tiles(&self) -> &[RgbImage] {
        &self.tiles
    }

    pub fn offsets(&self) -> &[(u32, u32)] {
        &self.offsets
    }

    pub fn slide(&self) -> &SlideManifest {
        self.slide
    }

    pub fn tile_dims(&self) -> (usize, usize) {
        let (w, h) = self.tiles[0].dimensions();
        (w as usize, h as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affinity {
    Concurrent,
    /// Must only ever be driven by one inference worker.
    SingleWorker,
}

pub trait Detector: Send + Sync {
    fn id(&self) -> &str;

    fn affinity(&self) -> Affinity {
        Affinity::Concurrent
    }

    /// One mask per tile, in batch order.
    fn detect(&self, batch: &TileBatch<'_>) -> Result<Vec<ProbMask>>;
}

/// Runs a detector and checks its output against the batch.
pub fn detect_tile_batch(batch: &TileBatch<'_>, detector: &dyn Detector) -> Result<Vec<ProbMask>> {
    let masks = detector.detect(batch)?;
    let (w, h) = batch.tile_dims();
    if masks.len() != batch.len() {
        return Err(Error::Detector {
            detector: detector.id().to_string(),
            message: format!("returned {} masks for {} tiles", masks.len(), batch.len()),
        });
    }
    if masks.iter().any(|m| m.width != w || m.height != h) {
        return Err(Error::Detector {
            detector: detector.id().to_string(),
            message: "mask size differs from tile size".into(),
        });
    }
    Ok(masks)
}

/// Planted ground truth of the tile, rasterized.
pub fn planted_mask(slide: &SlideManifest, offset: (u32, u32), dims: (usize, usize)) -> BinaryMask {
    let (x0, y0) = offset;
    let size = dims.0.max(dims.1) as u32;
    let near = slide.figures_near(x0, y0, size);
    let mpp = slide.mpp.value();
    if near.is_empty() {
        return BinaryMask::empty(dims.0, dims.1);
    }
    BinaryMask::from_fn(dims.0, dims.1, |x, y| {
        near.iter().any(|f| f.covers(x0 + x as u32, y0 + y as u32, mpp))
    })
}

/// Reads the planted figures from the slide manifest.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassthroughDetector;

impl Detector for PassthroughDetector {
    fn id(&self) -> &str {
        "passthrough"
    }

    fn detect(&self, batch: &TileBatch<'_>) -> Result<Vec<ProbMask>> {
        let dims = batch.tile_dims();
        Ok(batch
            .offsets()
            .iter()
            .map(|&o| ProbMask::from_mask(&planted_mask(batch.slide(), o, dims)))
            .collect())
    }
}

/// Dark-stain thresholding of the tile pixels.
///
/// The Otsu threshold of the tile L channel is capped at `max_stain` so that a
/// tile of plain tissue does not split its own texture into false figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobDetector {
    pub max_stain: u8,
}

impl Default for BlobDetector {
    fn default() -> Self {
        Self { max_stain: 110 }
    }
}

impl BlobDetector {
    pub fn detect_tile(&self, tile: &RgbImage) -> Result<BinaryMask> {
        let l = rgb_to_lab_l(tile)?;
        let otsu = otsu_threshold(&l.histogram())?;
        if otsu.degenerate {
            return Ok(BinaryMask::empty(l.width(), l.height()));
        }
        let raw = l.at_or_below(otsu.threshold.min(self.max_stain));
        Ok(refine_mask(&raw))
    }
}

impl Detector for BlobDetector {
    fn id(&self) -> &str {
        "blob"
    }

    fn detect(&self, batch: &TileBatch<'_>) -> Result<Vec<ProbMask>> {
        batch
            .tiles()
            .iter()
            .map(|t| self.detect_tile(t).map(|m| ProbMask::from_mask(&m)))
            .collect()
    }
}

/// Planted figures plus seeded 2×2 false-positive specks.
///
/// Specks keep a clearance of 3 pixels from every other foreground pixel so
/// each one is its own component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseDetector {
    pub seed: u64,
    pub specks: usize,
}

const SPECK_CLEARANCE: usize = 3;

impl NoiseDetector {
    pub fn add_specks(&self, mask: &mut BinaryMask, offset: (u32, u32)) {
        let (w, h) = (mask.width(), mask.height());
        if w < 2 || h < 2 {
            return;
        }
        let tile_seed = self.seed ^ (u64::from(offset.0) << 32 | u64::from(offset.1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(tile_seed);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < self.specks && attempts < 10_000 {
            attempts += 1;
            let x = rng.random_range(0..w - 1);
            let y = rng.random_range(0..h - 1);
            let lo_x = x.saturating_sub(SPECK_CLEARANCE);
            let lo_y = y.saturating_sub(SPECK_CLEARANCE);
            let hi_x = (x + 1 + SPECK_CLEARANCE).min(w - 1);
            let hi_y = (y + 1 + SPECK_CLEARANCE).min(h - 1);
            let clear = (lo_y..=hi_y).all(|yy| (lo_x..=hi_x).all(|xx| !mask.get(xx, yy)));
            if clear {
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    mask.set(x + dx, y + dy, true);
                }
                placed += 1;
            }
        }
    }
}

impl Detector for NoiseDetector {
    fn id(&self) -> &str {
        "noise"
    }

    fn detect(&self, batch: &TileBatch<'_>) -> Result<Vec<ProbMask>> {
        let dims = batch.tile_dims();
        Ok(batch
            .offsets()
            .iter()
            .map(|&o| {
                let mut mask = planted_mask(batch.slide(), o, dims);
                self.add_specks(&mut mask, o);
                ProbMask::from_mask(&mask)
            })
            .collect())
    }
}

/// Averages member predictions pixelwise.
pub struct EnsembleDetector {
    members: Vec<Box<dyn Detector>>,
}

impl EnsembleDetector {
    pub fn new(members: Vec<Box<dyn Detector>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::config("ensemble needs at least one member"));
        }
        Ok(Self { members })
    }
}

impl Detector for EnsembleDetector {
    fn id(&self) -> &str {
        "ensemble"
    }

    fn affinity(&self) -> Affinity {
        if self.members.iter().any(|m| m.affinity() == Affinity::SingleWorker) {
            Affinity::SingleWorker
        } else {
            Affinity::Concurrent
        }
    }

    fn detect(&self, batch: &TileBatch<'_>) -> Result<Vec<ProbMask>> {
        let (w, h) = batch.tile_dims();
        let mut sums = vec![vec![0.0f32; w * h]; batch.len()];
        for member in &self.members {
            for (sum, mask) in sums.iter_mut().zip(detect_tile_batch(batch, member.as_ref())?) {
                for (s, v) in sum.iter_mut().zip(mask.values) {
                    *s += v;
                }
            }
        }
        let n = self.members.len() as f32;
        sums.into_iter()
            .map(|s| ProbMask::new(w, h, s.into_iter().map(|v| (v / n).clamp(0.0, 1.0)).collect()))
            .collect()
    }
}

/// Counts invocations and tiles seen by the wrapped detector.
pub struct CountingDetector {
    inner: Box<dyn Detector>,
    calls: AtomicU64,
    tiles: AtomicU64,
}

impl CountingDetector {
    pub fn new(inner: Box<dyn Detector>) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
            tiles: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn tiles(&self) -> u64 {
        self.tiles.load(Ordering::SeqCst)
    }
}

impl Detector for CountingDetector {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn affinity(&self) -> Affinity {
        self.inner.affinity()
    }

    fn detect(&self, batch: &TileBatch<'_>) -> Result<Vec<ProbMask>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.tiles.fetch_add(batch.len() as u64, Ordering::SeqCst);
        self.inner.detect(batch)
    }
}

/// Detector selection as written in the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_stain: Option<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<DetectorSpec>,
}

impl DetectorSpec {
    pub fn named(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            seed: None,
            specks: None,
            max_stain: None,
            members: Vec::new(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Detector>> {
        Ok(match self.id.as_str() {
            "passthrough" => Box::new(PassthroughDetector),
            "blob" => Box::new(BlobDetector {
                max_stain: self.max_stain.unwrap_or(BlobDetector::default().max_stain),
            }),
            "noise" => Box::new(NoiseDetector {
                seed: self.seed.unwrap_or(0),
                specks: self.specks.unwrap_or(3),
            }),
            "ensemble" => Box::new(EnsembleDetector::new(
                self.members.iter().map(DetectorSpec::build).collect::<Result<_>>()?,
            )?),
            other => return Err(Error::config(format!("unknown detector id `{other}`"))),
        })
    }
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self::named("blob")
    }
}

/// File name used for a tile-sized mask or image at `offset`.
pub fn tile_file_name(offset: (u32, u32)) -> String {
    format!("tile_{}_{}.png", offset.0, offset.1)
}

fn parse_tile_file_name(name: &str) -> Option<(u32, u32)> {
    let (x, y) = name.strip_prefix("tile_")?.strip_suffix(".png")?.split_once('_')?;
    Some((x.parse().ok()?, y.parse().ok()?))
}

/// Writes the planted mask of every tile as an 8-bit PNG (255 = figure).
pub fn export_planted_masks(slide: &SlideManifest, dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    let dims = (slide.window_px as usize, slide.window_px as usize);
    for t in &slide.tiles {
        let mask = planted_mask(slide, (t.x, t.y), dims);
        let img = image::GrayImage::from_fn(slide.window_px, slide.window_px, |x, y| {
            image::Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
        });
        let path = dir.join(tile_file_name((t.x, t.y)));
        img.save(&path).context(|| format!("writing {}", path.display()))?;
    }
    Ok(slide.tiles.len())
}

/// Reads `tile_<x>_<y>.png` masks; a pixel is foreground when its gray level
/// divided by 255 reaches `threshold`. Sorted by offset (row-major).
pub fn load_mask_dir(dir: &Path, threshold: f32) -> Result<Vec<((u32, u32), BinaryMask)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).context(|| format!("reading {}", dir.display()))? {
        let entry = entry.context(|| format!("reading {}", dir.display()))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(offset) = parse_tile_file_name(&name) else { continue };
        let img = image::open(entry.path())
            .context(|| format!("reading {}", entry.path().display()))?
            .to_luma8();
        let (w, h) = img.dimensions();
        let prob = ProbMask::new(
            w as usize,
            h as usize,
            img.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect(),
        )?;
        out.push((offset, binarize(&prob, threshold)?));
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("no tile_<x>_<y>.png masks in {}", dir.display())));
    }
    out.sort_by_key(|&((x, y), _)| (y, x));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::{label_instances, Connectivity};
    use crate::synth::{plan_synthetic_slide, SlideSpec};
    use image::Rgb;

    #[test]
    fn binarize_examples() {
        assert!(binarize(&ProbMask::zeros(3, 2), 0.5).unwrap().is_empty());
        let ones = ProbMask::new(3, 2, vec![1.0; 6]).unwrap();
        assert_eq!(binarize(&ones, 0.5).unwrap().count_ones(), 6);
        let checker = ProbMask::new(2, 2, vec![0.4, 0.6, 0.6, 0.4]).unwrap();
        assert_eq!(binarize(&checker, 0.5).unwrap().bits(), &[false, true, true, false]);
        assert!(binarize(&checker, 0.0).is_err());
        assert!(binarize(&checker, 1.0).is_err());
        assert!(ProbMask::new(1, 1, vec![1.5]).is_err());
        assert!(ProbMask::new(1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn gate_white_is_no_count() {
        let white = RgbImage::from_pixel(224, 224, Rgb([255, 255, 255]));
        assert_eq!(HeuristicGate::default().decide(&white).unwrap().label, GateLabel::NoCount);
        let small = RgbImage::from_pixel(100, 224, Rgb([255, 255, 255]));
        assert!(HeuristicGate::default().decide(&small).is_err());
    }

    #[test]
    fn gate_half_tissue_is_count() {
        let img = RgbImage::from_fn(224, 224, |x, _| {
            if x < 112 {
                Rgb([228, 168, 198])
            } else {
                Rgb([246, 246, 244])
            }
        });
        let d = HeuristicGate::default().decide(&img).unwrap();
        assert_eq!(d.label, GateLabel::Count);
        assert!((d.score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gate_on_synthetic_thumbnails() {
        let tissue = plan_synthetic_slide(&SlideSpec::new("t", 3000, 2000)).unwrap();
        let blank = plan_synthetic_slide(&SlideSpec {
            blank: true,
            ..SlideSpec::new("b", 3000, 2000)
        })
        .unwrap();
        let gate = HeuristicGate::default();
        assert_eq!(gate.decide(&tissue.render_view(224, 224)).unwrap().label, GateLabel::Count);
        assert_eq!(gate.decide(&blank.render_view(224, 224)).unwrap().label, GateLabel::NoCount);
        let pass = PassthroughGate::default();
        let white = RgbImage::from_pixel(224, 224, Rgb([255, 255, 255]));
        assert_eq!(pass.classify(&white, &tissue).unwrap().label, GateLabel::Count);
    }

    fn two_figure_slide() -> SlideManifest {
        plan_synthetic_slide(&SlideSpec {
            n_figures: 2,
            seed: 5,
            ..SlideSpec::new("two", 600, 600)
        })
        .unwrap()
    }

    #[test]
    fn passthrough_reproduces_planted_regions() {
        let slide = two_figure_slide();
        let tile = slide.render_tile(0, 0);
        let batch = TileBatch::new(vec![tile], vec![(0, 0)], &slide).unwrap();
        let masks = detect_tile_batch(&batch, &PassthroughDetector).unwrap();
        let bin = binarize(&masks[0], 0.5).unwrap();
        assert_eq!(label_instances(&bin, Connectivity::Eight).count(), 2);
        for f in &slide.ground_truth {
            assert!(bin.get(f.center.x as usize, f.center.y as usize));
        }
    }

    #[test]
    fn noise_detector_adds_separate_specks() {
        let slide = plan_synthetic_slide(&SlideSpec {
            n_figures: 1,
            seed: 2,
            ..SlideSpec::new("one", 600, 600)
        })
        .unwrap();
        let batch = TileBatch::new(vec![slide.render_tile(0, 0)], vec![(0, 0)], &slide).unwrap();
        let noise = NoiseDetector { seed: 7, specks: 3 };
        let bin = binarize(&noise.detect(&batch).unwrap()[0], 0.5).unwrap();
        assert_eq!(label_instances(&bin, Connectivity::Eight).count(), 4);
        let again = binarize(&noise.detect(&batch).unwrap()[0], 0.5).unwrap();
        assert_eq!(bin, again);
    }

    #[test]
    fn blank_tile_gives_empty_masks() {
        let slide = plan_synthetic_slide(&SlideSpec {
            blank: true,
            ..SlideSpec::new("b", 600, 600)
        })
        .unwrap();
        let batch = TileBatch::new(vec![slide.render_tile(0, 0)], vec![(0, 0)], &slide).unwrap();
        for det in [
            DetectorSpec::named("passthrough"),
            DetectorSpec::named("blob"),
        ] {
            let masks = detect_tile_batch(&batch, det.build().unwrap().as_ref()).unwrap();
            assert!(masks[0].values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn blob_detector_finds_planted_figures() {
        let slide = two_figure_slide();
        let bin = BlobDetector::default().detect_tile(&slide.render_tile(0, 0)).unwrap();
        let labels = label_instances(&bin, Connectivity::Eight);
        assert_eq!(labels.count(), 2);
    }

    #[test]
    fn batching_does_not_change_masks() {
        let slide = plan_synthetic_slide(&SlideSpec {
            n_figures: 6,
            seed: 9,
            ..SlideSpec::new("b", 1800, 1200)
        })
        .unwrap();
        let tiles: Vec<_> = slide.tiles.iter().map(|t| (t.x, t.y)).collect();
        let imgs: Vec<_> = tiles.iter().map(|&(x, y)| slide.render_tile(x, y)).collect();
        let det = BlobDetector::default();
        let together = det
            .detect(&TileBatch::new(imgs.clone(), tiles.clone(), &slide).unwrap())
            .unwrap();
        for (i, img) in imgs.into_iter().enumerate() {
            let single = det.detect(&TileBatch::new(vec![img], vec![tiles[i]], &slide).unwrap()).unwrap();
            assert_eq!(single[0], together[i]);
        }
    }

    #[test]
    fn mask_files_round_trip() {
        let slide = two_figure_slide();
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(export_planted_masks(&slide, dir.path()).unwrap(), 1);
        std::fs::write(dir.path().join("notes.txt"), "skip me").unwrap();
        let masks = load_mask_dir(dir.path(), 0.5).unwrap();
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].1, planted_mask(&slide, (0, 0), (600, 600)));
        assert_eq!(parse_tile_file_name("tile_600_1200.png"), Some((600, 1200)));
        assert_eq!(parse_tile_file_name("tile_x_1.png"), None);
    }

    #[test]
    fn batch_validation() {
        let slide = two_figure_slide();
        let t = RgbImage::new(4, 4);
        assert!(TileBatch::new(vec![], vec![], &slide).is_err());
        assert!(TileBatch::new(vec![t.clone(); 17], vec![(0, 0); 17], &slide).is_err());
        assert!(TileBatch::new(vec![t.clone()], vec![], &slide).is_err());
        assert!(TileBatch::new(vec![t, RgbImage::new(5, 4)], vec![(0, 0); 2], &slide).is_err());
    }

    #[test]
    fn ensemble_and_spec() {
        let slide = two_figure_slide();
        let batch = TileBatch::new(vec![slide.render_tile(0, 0)], vec![(0, 0)], &slide).unwrap();
        let spec = DetectorSpec {
            members: vec![DetectorSpec::named("passthrough"), DetectorSpec::named("passthrough")],
            ..DetectorSpec::named("ensemble")
        };
        let ens = spec.build().unwrap();
        let a = ens.detect(&batch).unwrap();
        let b = PassthroughDetector.detect(&batch).unwrap();
        assert_eq!(a, b);
        assert!(matches!(DetectorSpec::named("unet").build(), Err(Error::Config(_))));
        let counting = CountingDetector::new(Box::new(PassthroughDetector));
        counting.detect(&batch).unwrap();
        counting.detect(&batch).unwrap();
        assert_eq!((counting.calls(), counting.tiles()), (2, 2));
    }
}
