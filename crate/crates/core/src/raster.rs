//! Minimal row-major rasters: 8-bit gray images and binary masks, plus the
//! square-kernel morphology used for tissue refinement and figure merging.
//!
//! Morphology only considers in-bounds neighbors. Dilation and erosion with
//! that convention form an adjunction, so closing is idempotent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("gray image must be non-empty"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "gray image buffer has {} pixels, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// 256-bin intensity histogram.
    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &p in &self.pixels {
            hist[p as usize] += 1;
        }
        hist
    }

    /// Mask of pixels with intensity at or below `threshold`.
    pub fn at_or_below(&self, threshold: u8) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.pixels.iter().map(|&p| p <= threshold).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask buffer has {} bits, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    /// Builds a mask from a predicate over pixel coordinates.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn dilate(&self, radius: usize) -> Self {
        self.square_filter(radius, true)
    }

    pub fn erode(&self, radius: usize) -> Self {
        self.square_filter(radius, false)
    }

    /// Morphological closing with a `(2r+1)²` square, i.e. `r` iterations of
    /// the 3×3 square kernel for each of dilation and erosion.
    pub fn close(&self, radius: usize) -> Self {
        self.dilate(radius).erode(radius)
    }

    /// 3×3 box blur of the {0,1} field re-thresholded at 0.5. Edge pixels
    /// average over their in-bounds neighbors only.
    pub fn box_blur_threshold(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = Self::empty(w, h);
        for y in 0..h {
            let y0 = y.saturating_sub(1);
            let y1 = (y + 1).min(h - 1);
            for x in 0..w {
                let x0 = x.saturating_sub(1);
                let x1 = (x + 1).min(w - 1);
                let mut ones = 0usize;
                let mut total = 0usize;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        total += 1;
                        ones += self.get(xx, yy) as usize;
                    }
                }
                out.set(x, y, 2 * ones >= total);
            }
        }
        out
    }

    /// Separable square min/max filter. A `radius`-r square window is the
    /// composition of r 3×3 windows when clipped to the raster.
    fn square_filter(&self, radius: usize, dilate: bool) -> Self {
        if radius == 0 || self.bits.is_empty() {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let pass = |src: &[bool], len: usize, stride: usize, lines: usize, line_stride: usize| {
            let mut dst = vec![false; src.len()];
            let mut prefix = vec![0usize; len + 1];
            for line in 0..lines {
                let base = line * line_stride;
                for i in 0..len {
                    prefix[i + 1] = prefix[i] + src[base + i * stride] as usize;
                }
                for i in 0..len {
                    let lo = i.saturating_sub(radius);
                    let hi = (i + radius).min(len - 1);
                    let ones = prefix[hi + 1] - prefix[lo];
                    dst[base + i * stride] = if dilate {
                        ones > 0
                    } else {
                        ones == hi + 1 - lo
                    };
                }
            }
            dst
        };
        let rows = pass(&self.bits, w, 1, h, w);
        let bits = pass(&rows, h, w, w, 1);
        Self {
            width: w,
            height: h,
            bits,
        }
    }
}
