//! Physical units, planar points and the Chebyshev metric.
//!
//! Every region computation in the crate happens in full-resolution pixel
//! coordinates. Micron thresholds are converted exactly once per slide through
//! [`MicronsPerPixel`], and derived lengths stay real-valued until a raster
//! operation needs an integer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical area of a 10HPF reporting region in mm².
pub const HPF_AREA_MM2: f64 = 2.37;

const UM2_PER_MM2: f64 = 1.0e6;

/// Scan resolution in micrometers per full-resolution pixel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MicronsPerPixel(f64);

impl MicronsPerPixel {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::invalid(format!(
                "microns per pixel must be positive and finite, got {value}"
            )));
        }
        Ok(Self(value))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for MicronsPerPixel {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<MicronsPerPixel> for f64 {
    fn from(mpp: MicronsPerPixel) -> f64 {
        mpp.0
    }
}

/// A point in full-resolution pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn euclidean(self, other: Self) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    #[inline]
    pub fn offset(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

/// L∞ distance between two points.
#[inline]
pub fn chebyshev(a: Point2, b: Point2) -> f64 {
    (a.x - b.x).abs().max((a.y - b.y).abs())
}

/// Converts a physical length to full-resolution pixels.
pub fn microns_to_pixels(um: f64, mpp: MicronsPerPixel) -> Result<f64> {
    if !um.is_finite() {
        return Err(Error::invalid(format!("length must be finite, got {um}")));
    }
    if um < 0.0 {
        return Err(Error::invalid(format!("length must be non-negative, got {um}")));
    }
    Ok(um / mpp.value())
}

/// Pixel size of the square 10HPF region at a given scan resolution.
///
/// The region is the closed Chebyshev ball of `radius_px` around its center,
/// i.e. an axis-aligned square of side `side_px = 2 * radius_px`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpfGeometry {
    pub area_mm2: f64,
    pub side_px: f64,
    pub radius_px: f64,
}

impl HpfGeometry {
    /// Side length of the region in micrometers, independent of resolution.
    pub fn side_um(area_mm2: f64) -> f64 {
        (area_mm2 * UM2_PER_MM2).sqrt()
    }

    pub fn with_area(area_mm2: f64, mpp: MicronsPerPixel) -> Result<Self> {
        if !area_mm2.is_finite() || area_mm2 <= 0.0 {
            return Err(Error::invalid(format!("hpf area must be positive, got {area_mm2}")));
        }
        let side_px = microns_to_pixels(Self::side_um(area_mm2), mpp)?;
        Ok(Self {
            area_mm2,
            side_px,
            radius_px: side_px / 2.0,
        })
    }
}

/// Standard 2.37 mm² 10HPF geometry for the given resolution.
pub fn hpf_geometry(mpp: MicronsPerPixel) -> HpfGeometry {
    // area is a positive constant and mpp is validated, so this cannot fail
    HpfGeometry::with_area(HPF_AREA_MM2, mpp).expect("valid constant hpf area")
}
