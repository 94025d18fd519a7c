//! Coarse tissue segmentation on a low-resolution slide view and the
//! sliding-window tile grid derived from it.

use std::cmp::Ordering;

use image::RgbImage;
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};

/// D65 reference white luminance is normalized to 1.
const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

fn srgb_to_linear(c: u8) -> f64 {
    let c = f64::from(c) / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lightness_lut() -> &'static [f64; 256] {
    use std::sync::OnceLock;
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [0.0; 256];
        for (i, v) in lut.iter_mut().enumerate() {
            *v = srgb_to_linear(i as u8);
        }
        lut
    })
}

/// CIE L* (0..=100) of an sRGB pixel under D65.
pub fn cie_lightness(rgb: [u8; 3]) -> f64 {
    let lut = lightness_lut();
    let y = 0.2126 * lut[rgb[0] as usize] + 0.7152 * lut[rgb[1] as usize] + 0.0722 * lut[rgb[2] as usize];
    let f = if y > LAB_EPSILON {
        y.cbrt()
    } else {
        (LAB_KAPPA * y + 16.0) / 116.0
    };
    116.0 * f - 16.0
}

/// L channel of the CIELAB conversion, scaled from [0,100] to [0,255].
pub fn rgb_to_lab_l(rgb: &RgbImage) -> Result<GrayImage> {
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot convert an empty image"));
    }
    let pixels = rgb
        .pixels()
        .map(|p| (cie_lightness(p.0) * 2.55).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(w as usize, h as usize, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OtsuThreshold {
    /// Intensities `<= threshold` form the lower class.
    pub threshold: u8,
    /// Set when the histogram holds a single intensity; there is no split.
    pub degenerate: bool,
}

/// Otsu's threshold over a 256-bin histogram.
///
/// Maximizes the between-class variance of the split `{<= t}` / `{> t}`.
/// Scores are compared exactly as rationals so that ties resolve to the
/// smallest `t` regardless of accumulation order.
pub fn otsu_threshold(histogram: &[u64]) -> Result<OtsuThreshold> {
    if histogram.len() != 256 {
        return Err(Error::invalid(format!(
            "otsu histogram must have 256 bins, got {}",
            histogram.len()
        )));
    }
    let nonzero: Vec<usize> = (0..256).filter(|&i| histogram[i] > 0).collect();
    match nonzero.len() {
        0 => return Err(Error::invalid("otsu histogram is empty")),
        1 => {
            return Ok(OtsuThreshold {
                threshold: nonzero[0] as u8,
                degenerate: true,
            })
        }
        _ => {}
    }

    let total = BigInt::from(histogram.iter().map(|&c| u128::from(c)).sum::<u128>());
    let total_sum = BigInt::from(
        histogram
            .iter()
            .enumerate()
            .map(|(i, &c)| i as u128 * u128::from(c))
            .sum::<u128>(),
    );

    // score(t) = (s0*W - w0*S)^2 / (w0 * w1), proportional to w0*w1*(mu0-mu1)^2
    let mut best: Option<(BigInt, BigInt, usize)> = None;
    let mut w0: u128 = 0;
    let mut s0: u128 = 0;
    for (t, &count) in histogram.iter().enumerate() {
        w0 += u128::from(count);
        s0 += t as u128 * u128::from(count);
        let w0b = BigInt::from(w0);
        let w1b = &total - &w0b;
        if w0 == 0 || w1b == BigInt::from(0) {
            continue;
        }
        let diff = BigInt::from(s0) * &total - &w0b * &total_sum;
        let num = &diff * &diff;
        let den = w0b * w1b;
        let better = match &best {
            None => true,
            Some((bn, bd, _)) => (&num * bd).cmp(&(bn * &den)) == Ordering::Greater,
        };
        if better {
            best = Some((num, den, t));
        }
    }
    let (_, _, t) = best.expect("two nonzero bins always admit a split");
    Ok(OtsuThreshold {
        threshold: t as u8,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    pub iterations: usize,
    pub blur: bool,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            iterations: 2,
            blur: true,
        }
    }
}

/// Closing with the 3×3 square followed by a thresholded box blur.
pub fn refine_mask(mask: &BinaryMask) -> BinaryMask {
    refine_mask_with(mask, RefineParams::default())
}

pub fn refine_mask_with(mask: &BinaryMask, params: RefineParams) -> BinaryMask {
    let closed = mask.close(params.iterations);
    if params.blur {
        closed.box_blur_threshold()
    } else {
        closed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    pub mask: BinaryMask,
    pub otsu: OtsuThreshold,
}

/// Tissue is darker than the back-lit background: pixels whose L value is at
/// or below the Otsu threshold, refined. A single-intensity view has no tissue.
pub fn detect_tissue(overview: &RgbImage, params: RefineParams) -> Result<TissueMask> {
    let l = rgb_to_lab_l(overview)?;
    let otsu = otsu_threshold(&l.histogram())?;
    let mask = if otsu.degenerate {
        BinaryMask::empty(l.width(), l.height())
    } else {
        refine_mask_with(&l.at_or_below(otsu.threshold), params)
    };
    Ok(TissueMask { mask, otsu })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileParams {
    pub window_px: u32,
    /// Minimum fraction of a tile that must be tissue.
    pub min_coverage: f64,
    /// Coverage is sampled on a `samples x samples` lattice per tile.
    pub samples_per_tile: u32,
}

impl Default for TileParams {
    fn default() -> Self {
        Self {
            window_px: 600,
            min_coverage: 0.05,
            samples_per_tile: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub window_px: u32,
    pub cols: u32,
    pub rows: u32,
    /// Full-resolution pixels per low-resolution mask pixel, per axis.
    pub scale: (f64, f64),
    /// Full-resolution offsets of the selected tiles, row-major.
    pub tiles: Vec<(u32, u32)>,
}

impl TileGrid {
    pub fn padded_dims(&self) -> (u32, u32) {
        (self.cols * self.window_px, self.rows * self.window_px)
    }
}

/// Number of windows needed to cover `len` pixels; at least one.
pub fn window_count(len: u32, window_px: u32) -> u32 {
    len.div_ceil(window_px).max(1)
}

/// Selects sliding-window tiles that contain tissue.
///
/// The slide is padded right/bottom with background to a whole number of
/// windows. The low-resolution mask is resampled (nearest) onto a lattice of
/// `samples_per_tile²` points per window; padded samples count as background.
pub fn tissue_tiles(mask: &BinaryMask, slide_dims: (u32, u32), params: TileParams) -> Result<TileGrid> {
    let (sw, sh) = slide_dims;
    if sw == 0 || sh == 0 {
        return Err(Error::invalid("slide dimensions must be positive"));
    }
    if params.window_px == 0 || params.samples_per_tile == 0 {
        return Err(Error::invalid("tile window and sampling must be positive"));
    }
    if !(0.0..=1.0).contains(&params.min_coverage) {
        return Err(Error::invalid("tile coverage threshold must be in [0,1]"));
    }
    if mask.width() == 0 || mask.height() == 0 {
        return Err(Error::invalid("tissue mask must be non-empty"));
    }
    let win = params.window_px;
    let cols = window_count(sw, win);
    let rows = window_count(sh, win);
    let scale = (
        f64::from(sw) / mask.width() as f64,
        f64::from(sh) / mask.height() as f64,
    );
    let s = params.samples_per_tile;
    let step = f64::from(win) / f64::from(s);
    let total = f64::from(s * s);

    let mut tiles = Vec::new();
    for ty in 0..rows {
        for tx in 0..cols {
            let mut hits = 0u32;
            for sy in 0..s {
                let fy = f64::from(ty * win) + (f64::from(sy) + 0.5) * step;
                if fy >= f64::from(sh) {
                    continue;
                }
                let my = ((fy / scale.1) as usize).min(mask.height() - 1);
                for sx in 0..s {
                    let fx = f64::from(tx * win) + (f64::from(sx) + 0.5) * step;
                    if fx >= f64::from(sw) {
                        continue;
                    }
                    let mx = ((fx / scale.0) as usize).min(mask.width() - 1);
                    hits += mask.get(mx, my) as u32;
                }
            }
            let coverage = f64::from(hits) / total;
            if hits > 0 && coverage >= params.min_coverage {
                tiles.push((tx * win, ty * win));
            }
        }
    }
    Ok(TileGrid {
        window_px: win,
        cols,
        rows,
        scale,
        tiles,
    })
}
