//! Synthetic whole-slide images with planted ground truth.
//!
//! A slide is a directory:
//!
//! ```text
//! <slide_id>/manifest.json     SlideManifest (serde JSON)
//! <slide_id>/thumbnail.png     224x224 RGB view of the whole slide
//! <slide_id>/overview.png      low-resolution RGB view, 1/overview_downsample
//! <slide_id>/tiles/tile_<x>_<y>.png   600x600 RGB, padded with background
//! ```
//!
//! Rendering is a pure function of the manifest: every pixel color comes from
//! a coordinate hash, so tiles, thumbnail and overview agree and can be
//! produced independently.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Context, Error, Result};
use crate::tissue::window_count;
use crate::units::{MicronsPerPixel, Point2};

pub const THUMBNAIL_PX: u32 = 224;
pub const DEFAULT_WINDOW_PX: u32 = 600;
pub const MANIFEST_FILE: &str = "manifest.json";

const BACKGROUND: [f64; 3] = [246.0, 246.0, 244.0];
const TISSUE: [f64; 3] = [228.0, 168.0, 198.0];
const STAIN: [f64; 3] = [72.0, 38.0, 112.0];

/// Minimum boundary clearance between unrelated planted objects. Larger than
/// 15·√2 µm so square-kernel merging never joins them.
const CLEARANCE_UM: f64 = 25.0;
const MAX_ATTEMPTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateLabel {
    Count,
    NoCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFigure {
    pub id: u32,
    pub center: Point2,
    pub major_um: f64,
    pub minor_um: f64,
    /// Direction of the major axis, degrees from +x.
    pub orientation_deg: f64,
    pub is_speck: bool,
    pub pair_partner: Option<u32>,
}

impl PlantedFigure {
    /// Half extents of the ellipse in pixels.
    fn semi_axes_px(&self, mpp: f64) -> (f64, f64) {
        (self.major_um / 2.0 / mpp, self.minor_um / 2.0 / mpp)
    }

    /// Radius in pixels of a circle enclosing the rendered blob.
    pub fn bounding_radius_px(&self, mpp: f64) -> f64 {
        self.semi_axes_px(mpp).0 + 1.0
    }

    /// Whether the full-resolution pixel `(x, y)` is painted by this figure.
    /// The pixel holding the center is always painted so tiny specks survive.
    pub fn covers(&self, x: u32, y: u32, mpp: f64) -> bool {
        if x == self.center.x.floor() as u32 && y == self.center.y.floor() as u32 {
            return true;
        }
        let (a, b) = self.semi_axes_px(mpp);
        let dx = f64::from(x) + 0.5 - self.center.x;
        let dy = f64::from(y) + 0.5 - self.center.y;
        if dx.abs() > a + 1.0 || dy.abs() > a + 1.0 {
            return false;
        }
        let (s, c) = self.orientation_deg.to_radians().sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub x: u32,
    pub y: u32,
    pub path: String,
}

/// Elliptical tissue region, full-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueRegion {
    pub center: Point2,
    pub semi_x: f64,
    pub semi_y: f64,
}

impl TissueRegion {
    fn contains(&self, x: f64, y: f64) -> bool {
        ((x - self.center.x) / self.semi_x).powi(2) + ((y - self.center.y) / self.semi_y).powi(2) <= 1.0
    }

    fn contains_inset(&self, p: Point2, inset: f64) -> bool {
        if self.semi_x <= inset || self.semi_y <= inset {
            return false;
        }
        ((p.x - self.center.x) / (self.semi_x - inset)).powi(2) + ((p.y - self.center.y) / (self.semi_y - inset)).powi(2)
            <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideManifest {
    pub slide_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub mpp: MicronsPerPixel,
    pub window_px: u32,
    pub seed: u64,
    pub tissue: Option<TissueRegion>,
    pub tiles: Vec<TileEntry>,
    pub thumbnail: String,
    pub overview: String,
    pub overview_downsample: u32,
    pub gate_truth: Option<GateLabel>,
    pub ground_truth: Vec<PlantedFigure>,
}

impl SlideManifest {
    pub fn grid(&self) -> (u32, u32) {
        (
            window_count(self.width_px, self.window_px),
            window_count(self.height_px, self.window_px),
        )
    }

    pub fn padded_dims(&self) -> (u32, u32) {
        let (c, r) = self.grid();
        (c * self.window_px, r * self.window_px)
    }

    /// Planted figures that are not sub-threshold specks.
    pub fn valid_figures(&self) -> impl Iterator<Item = &PlantedFigure> {
        self.ground_truth.iter().filter(|f| !f.is_speck)
    }

    /// Number of figures a correct count should report: every non-speck
    /// figure, with each merge-eligible pair counted once.
    pub fn expected_count(&self, max_interpolar_um: f64) -> usize {
        let mut n = 0;
        for f in self.valid_figures() {
            match f.pair_partner {
                Some(p) if p < f.id => {
                    let partner = self.ground_truth.iter().find(|g| g.id == p);
                    let gap = partner.map(|g| pair_gap_um(f, g, self.mpp.value()));
                    if gap.is_none_or(|gap| gap > max_interpolar_um + 1e-9) {
                        n += 1;
                    }
                }
                _ => n += 1,
            }
        }
        n
    }

    pub fn tile_path(&self, x: u32, y: u32) -> String {
        format!("tiles/tile_{x}_{y}.png")
    }

    /// Figures whose bounding circle touches the given window.
    pub fn figures_near(&self, x0: u32, y0: u32, size: u32) -> Vec<&PlantedFigure> {
        let mpp = self.mpp.value();
        self.ground_truth
            .iter()
            .filter(|f| {
                let r = f.bounding_radius_px(mpp);
                f.center.x + r >= f64::from(x0)
                    && f.center.x - r <= f64::from(x0 + size)
                    && f.center.y + r >= f64::from(y0)
                    && f.center.y - r <= f64::from(y0 + size)
            })
            .collect()
    }

    /// Color of a full-resolution pixel.
    pub fn pixel(&self, x: u32, y: u32, near: &[&PlantedFigure]) -> [u8; 3] {
        let mpp = self.mpp.value();
        let n = hash_noise(self.seed, x, y);
        if x >= self.width_px || y >= self.height_px {
            return BACKGROUND.map(|c| c as u8);
        }
        let base = if near.iter().any(|f| f.covers(x, y, mpp)) {
            STAIN.map(|c| c + 10.0 * n)
        } else if self.tissue.is_some_and(|t| t.contains(f64::from(x) + 0.5, f64::from(y) + 0.5)) {
            let tex = value_noise(self.seed, f64::from(x) * mpp / 40.0, f64::from(y) * mpp / 40.0);
            TISSUE.map(|c| c + 14.0 * tex + 5.0 * n)
        } else {
            BACKGROUND.map(|c| c + 1.5 * n)
        };
        base.map(|c| c.round().clamp(0.0, 255.0) as u8)
    }

    pub fn render_tile(&self, x0: u32, y0: u32) -> RgbImage {
        let w = self.window_px;
        let near = self.figures_near(x0, y0, w);
        RgbImage::from_fn(w, w, |dx, dy| Rgb(self.pixel(x0 + dx, y0 + dy, &near)))
    }

    /// Point-sampled view of the unpadded slide.
    pub fn render_view(&self, width: u32, height: u32) -> RgbImage {
        let sx = f64::from(self.width_px) / f64::from(width);
        let sy = f64::from(self.height_px) / f64::from(height);
        let all: Vec<&PlantedFigure> = self.ground_truth.iter().collect();
        RgbImage::from_fn(width, height, |i, j| {
            let x = ((f64::from(i) + 0.5) * sx) as u32;
            let y = ((f64::from(j) + 0.5) * sy) as u32;
            Rgb(self.pixel(x.min(self.width_px - 1), y.min(self.height_px - 1), &all))
        })
    }

    pub fn overview_dims(&self) -> (u32, u32) {
        (
            self.width_px.div_ceil(self.overview_downsample).max(1),
            self.height_px.div_ceil(self.overview_downsample).max(1),
        )
    }
}

/// Boundary gap between two pair blobs along the line joining them.
fn pair_gap_um(a: &PlantedFigure, b: &PlantedFigure, mpp: f64) -> f64 {
    let d = a.center.euclidean(b.center) * mpp;
    d - a.minor_um / 2.0 - b.minor_um / 2.0
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic noise in [-1, 1] per pixel.
pub(crate) fn hash_noise(seed: u64, x: u32, y: u32) -> f64 {
    let h = splitmix(seed ^ splitmix((u64::from(x) << 32) | u64::from(y)));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let corner = |dx: u32, dy: u32| hash_noise(seed ^ 0xA5A5, x0 as u32 + dx, y0 as u32 + dy);
    let top = corner(0, 0) * (1.0 - fx) + corner(1, 0) * fx;
    let bottom = corner(0, 1) * (1.0 - fx) + corner(1, 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn default_mpp() -> f64 {
    0.25
}

fn default_pair_gap() -> f64 {
    10.0
}

fn default_window() -> u32 {
    DEFAULT_WINDOW_PX
}

fn default_downsample() -> u32 {
    16
}

/// Parameters for one synthetic slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideSpec {
    pub slide_id: String,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default = "default_mpp")]
    pub mpp: f64,
    #[serde(default)]
    pub n_figures: usize,
    #[serde(default)]
    pub n_specks: usize,
    #[serde(default)]
    pub n_pairs: usize,
    #[serde(default = "default_pair_gap")]
    pub pair_gap_um: f64,
    /// Per-pair gaps; overrides `pair_gap_um` when non-empty, cycled.
    #[serde(default)]
    pub pair_gaps_um: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// A blank slide carries no tissue and is labeled no-count.
    #[serde(default)]
    pub blank: bool,
    #[serde(default = "default_window")]
    pub window_px: u32,
    #[serde(default = "default_downsample")]
    pub overview_downsample: u32,
}

impl SlideSpec {
    pub fn new(slide_id: impl Into<String>, width_px: u32, height_px: u32) -> Self {
        Self {
            slide_id: slide_id.into(),
            width_px,
            height_px,
            mpp: default_mpp(),
            n_figures: 0,
            n_specks: 0,
            n_pairs: 0,
            pair_gap_um: default_pair_gap(),
            pair_gaps_um: Vec::new(),
            seed: 0,
            blank: false,
            window_px: DEFAULT_WINDOW_PX,
            overview_downsample: default_downsample(),
        }
    }
}

struct Placer<'a> {
    rng: ChaCha8Rng,
    mpp: f64,
    tissue: TissueRegion,
    window: u32,
    width: u32,
    height: u32,
    placed: Vec<(Point2, f64)>,
    figures: &'a mut Vec<PlantedFigure>,
}

impl Placer<'_> {
    /// A blob must sit fully inside one window whose area is mostly tissue.
    fn blob_fits(&self, c: Point2, r: f64) -> bool {
        let w = f64::from(self.window);
        if c.x - r < 0.0 || c.y - r < 0.0 || c.x + r >= f64::from(self.width) || c.y + r >= f64::from(self.height) {
            return false;
        }
        let (tx, ty) = ((c.x / w).floor(), (c.y / w).floor());
        if ((c.x - r) / w).floor() != tx || ((c.x + r) / w).floor() != tx {
            return false;
        }
        if ((c.y - r) / w).floor() != ty || ((c.y + r) / w).floor() != ty {
            return false;
        }
        if !self.tissue.contains_inset(c, r + 4.0) {
            return false;
        }
        let mut hits = 0;
        for j in 0..8 {
            for i in 0..8 {
                let x = tx * w + (f64::from(i) + 0.5) * w / 8.0;
                let y = ty * w + (f64::from(j) + 0.5) * w / 8.0;
                hits += self.tissue.contains(x, y) as u32;
            }
        }
        hits >= 32
    }

    fn clear_of_others(&self, c: Point2, r: f64) -> bool {
        let clearance = CLEARANCE_UM / self.mpp;
        self.placed.iter().all(|&(p, pr)| p.euclidean(c) > r + pr + clearance)
    }

    fn random_center(&mut self) -> Point2 {
        let t = self.tissue;
        Point2::new(
            self.rng.random_range(t.center.x - t.semi_x..t.center.x + t.semi_x),
            self.rng.random_range(t.center.y - t.semi_y..t.center.y + t.semi_y),
        )
    }

    fn next_id(&self) -> u32 {
        self.figures.len() as u32 + 1
    }

    fn place_single(&mut self, speck: bool) -> Result<()> {
        for _ in 0..MAX_ATTEMPTS {
            let (major, minor) = if speck {
                let major = self.rng.random_range(1.2..2.0);
                (major, self.rng.random_range(1.0..=major))
            } else {
                (self.rng.random_range(7.0..12.0), self.rng.random_range(4.0..7.0))
            };
            let orientation = self.rng.random_range(0.0..180.0);
            let c = self.random_center();
            let r = major / 2.0 / self.mpp + 1.0;
            if self.blob_fits(c, r) && self.clear_of_others(c, r) {
                self.placed.push((c, r));
                let id = self.next_id();
                self.figures.push(PlantedFigure {
                    id,
                    center: c,
                    major_um: major,
                    minor_um: minor,
                    orientation_deg: orientation,
                    is_speck: speck,
                    pair_partner: None,
                });
                return Ok(());
            }
        }
        Err(Error::Generation(format!(
            "could not place a {} after {MAX_ATTEMPTS} attempts",
            if speck { "speck" } else { "figure" }
        )))
    }

    /// Two plates facing each other across `gap_um`, axis horizontal or
    /// vertical, major axes perpendicular to the axis.
    fn place_pair(&mut self, gap_um: f64) -> Result<()> {
        for _ in 0..MAX_ATTEMPTS {
            let major = self.rng.random_range(5.0..8.0);
            let minor = self.rng.random_range(2.0..3.0);
            let horizontal = self.rng.random_bool(0.5);
            let mid = self.random_center();
            let half = (gap_um + minor) / 2.0 / self.mpp;
            let (a, b, orientation) = if horizontal {
                (mid.offset(-half, 0.0), mid.offset(half, 0.0), 90.0)
            } else {
                (mid.offset(0.0, -half), mid.offset(0.0, half), 0.0)
            };
            let r = major / 2.0 / self.mpp + 1.0;
            let pair_r = half + r;
            if self.blob_fits(a, r) && self.blob_fits(b, r) && self.clear_of_others(mid, pair_r) {
                self.placed.push((mid, pair_r));
                let id_a = self.next_id();
                let id_b = id_a + 1;
                for (center, id, partner) in [(a, id_a, id_b), (b, id_b, id_a)] {
                    self.figures.push(PlantedFigure {
                        id,
                        center,
                        major_um: major,
                        minor_um: minor,
                        orientation_deg: orientation,
                        is_speck: false,
                        pair_partner: Some(partner),
                    });
                }
                return Ok(());
            }
        }
        Err(Error::Generation(format!(
            "could not place a pair with {gap_um} um gap after {MAX_ATTEMPTS} attempts"
        )))
    }
}

/// Builds the manifest for a slide without touching the filesystem.
pub fn plan_synthetic_slide(spec: &SlideSpec) -> Result<SlideManifest> {
    let mpp = MicronsPerPixel::new(spec.mpp)?;
    if spec.width_px == 0 || spec.height_px == 0 {
        return Err(Error::invalid("slide dimensions must be positive"));
    }
    if spec.window_px == 0 || spec.overview_downsample == 0 {
        return Err(Error::invalid("window and overview downsample must be positive"));
    }
    if spec.slide_id.is_empty() || spec.slide_id.contains(['/', '\\']) {
        return Err(Error::invalid(format!("bad slide id `{}`", spec.slide_id)));
    }
    if spec.blank && (spec.n_figures + spec.n_specks + spec.n_pairs) > 0 {
        return Err(Error::invalid("a blank slide cannot hold figures"));
    }
    let gaps: Vec<f64> = if spec.pair_gaps_um.is_empty() {
        vec![spec.pair_gap_um]
    } else {
        spec.pair_gaps_um.clone()
    };
    if gaps.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::invalid("pair gaps must be non-negative"));
    }

    let tissue = (!spec.blank).then(|| TissueRegion {
        center: Point2::new(f64::from(spec.width_px) / 2.0, f64::from(spec.height_px) / 2.0),
        semi_x: f64::from(spec.width_px) * 0.45,
        semi_y: f64::from(spec.height_px) * 0.45,
    });

    let mut figures = Vec::new();
    if let Some(tissue) = tissue {
        let mut placer = Placer {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            mpp: mpp.value(),
            tissue,
            window: spec.window_px,
            width: spec.width_px,
            height: spec.height_px,
            placed: Vec::new(),
            figures: &mut figures,
        };
        // pairs first: they need the most room
        for i in 0..spec.n_pairs {
            placer.place_pair(gaps[i % gaps.len()])?;
        }
        for _ in 0..spec.n_figures {
            placer.place_single(false)?;
        }
        for _ in 0..spec.n_specks {
            placer.place_single(true)?;
        }
    }

    let cols = window_count(spec.width_px, spec.window_px);
    let rows = window_count(spec.height_px, spec.window_px);
    let mut manifest = SlideManifest {
        slide_id: spec.slide_id.clone(),
        width_px: spec.width_px,
        height_px: spec.height_px,
        mpp,
        window_px: spec.window_px,
        seed: spec.seed,
        tissue,
        tiles: Vec::with_capacity((cols * rows) as usize),
        thumbnail: "thumbnail.png".into(),
        overview: "overview.png".into(),
        overview_downsample: spec.overview_downsample,
        gate_truth: Some(if spec.blank { GateLabel::NoCount } else { GateLabel::Count }),
        ground_truth: figures,
    };
    for ty in 0..rows {
        for tx in 0..cols {
            let (x, y) = (tx * spec.window_px, ty * spec.window_px);
            let path = manifest.tile_path(x, y);
            manifest.tiles.push(TileEntry { x, y, path });
        }
    }
    Ok(manifest)
}

/// Plans and renders a slide into `out_dir/<slide_id>/`.
pub fn gen_synthetic_slide(spec: &SlideSpec, out_dir: &Path) -> Result<SlideDir> {
    let manifest = plan_synthetic_slide(spec)?;
    write_slide(&manifest, out_dir)
}

pub fn write_slide(manifest: &SlideManifest, out_dir: &Path) -> Result<SlideDir> {
    let dir = out_dir.join(&manifest.slide_id);
    fs::create_dir_all(dir.join("tiles")).context(|| format!("creating {}", dir.display()))?;
    for t in &manifest.tiles {
        let path = dir.join(&t.path);
        manifest
            .render_tile(t.x, t.y)
            .save(&path)
            .context(|| format!("writing {}", path.display()))?;
    }
    let thumb = dir.join(&manifest.thumbnail);
    manifest
        .render_view(THUMBNAIL_PX, THUMBNAIL_PX)
        .save(&thumb)
        .context(|| format!("writing {}", thumb.display()))?;
    let (ow, oh) = manifest.overview_dims();
    let overview = dir.join(&manifest.overview);
    manifest
        .render_view(ow, oh)
        .save(&overview)
        .context(|| format!("writing {}", overview.display()))?;
    let json = serde_json::to_string_pretty(manifest).context(|| "serializing manifest".into())?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json).context(|| format!("writing {}", mpath.display()))?;
    Ok(SlideDir {
        dir,
        manifest: manifest.clone(),
    })
}

/// A slide directory on disk and its parsed manifest.
#[derive(Debug, Clone)]
pub struct SlideDir {
    pub dir: PathBuf,
    pub manifest: SlideManifest,
}

impl SlideDir {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).context(|| format!("reading {}", mpath.display()))?;
        let manifest: SlideManifest =
            serde_json::from_str(&text).context(|| format!("parsing {}", mpath.display()))?;
        Ok(Self { dir, manifest })
    }

    fn read_rgb(&self, rel: &str) -> Result<RgbImage> {
        let path = self.dir.join(rel);
        Ok(image::open(&path)
            .context(|| format!("reading {}", path.display()))?
            .to_rgb8())
    }

    pub fn thumbnail(&self) -> Result<RgbImage> {
        self.read_rgb(&self.manifest.thumbnail)
    }

    pub fn overview(&self) -> Result<RgbImage> {
        self.read_rgb(&self.manifest.overview)
    }

    pub fn tile(&self, x: u32, y: u32) -> Result<RgbImage> {
        let entry = self
            .manifest
            .tiles
            .iter()
            .find(|t| t.x == x && t.y == y)
            .ok_or_else(|| Error::invalid(format!("slide {} has no tile at ({x},{y})", self.manifest.slide_id)))?;
        self.read_rgb(&entry.path)
    }
}

/// A batch of slides to generate, as read from a spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBatch {
    #[serde(rename = "slide")]
    pub slides: Vec<SlideSpec>,
}
