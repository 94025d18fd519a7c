//! From binary detector masks to validated mitotic-figure instances.
//!
//! Per tile: connected components, minimum-width filtering on each
//! component's minimum-area rectangle, then merging of late-stage figures
//! whose parts lie within the interpolar distance. Across tiles,
//! [`merge_global`] merges figure centers that a tile border split apart.

mod geometry;
mod labeling;
mod merge;

use serde::{Deserialize, Serialize};

pub use geometry::{convex_hull, min_area_rect, pixel_corners, trace_outer_contour, RotatedRect};
pub use labeling::{label_instances, Connectivity, LabeledMask};
pub use merge::{dilation_iterations, merge_global, merge_interpolar, GlobalMerge};

use crate::error::Result;
use crate::raster::BinaryMask;
use crate::units::{MicronsPerPixel, Point2};

pub const DEFAULT_MIN_WIDTH_UM: f64 = 3.0;
pub const DEFAULT_MAX_INTERPOLAR_UM: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfInstance {
    pub label: u32,
    pub pixel_count: usize,
    /// Outline in tile pixel-corner coordinates. For an instance assembled
    /// from several separated parts this is their convex hull.
    pub contour: Vec<Point2>,
    pub min_rect: RotatedRect,
    /// Full-resolution offset of the tile the instance was found in.
    pub tile_offset: (u32, u32),
    pub center_fullres: Point2,
    pub width_um: f64,
}

/// Measures every labeled instance of a tile.
pub fn extract_instances(labels: &LabeledMask, tile_offset: (u32, u32), mpp: MicronsPerPixel) -> Result<Vec<MfInstance>> {
    let groups = labels.pixels_by_label();
    let mut out = Vec::with_capacity(groups.len());
    for (i, pixels) in groups.iter().enumerate() {
        let label = i as u32 + 1;
        if pixels.is_empty() {
            continue;
        }
        let contour = instance_contour(labels, label, pixels);
        let min_rect = min_area_rect(&contour)?;
        out.push(MfInstance {
            label,
            pixel_count: pixels.len(),
            center_fullres: min_rect
                .center
                .offset(f64::from(tile_offset.0), f64::from(tile_offset.1)),
            width_um: min_rect.long_side() * mpp.value(),
            contour,
            min_rect,
            tile_offset,
        });
    }
    Ok(out)
}

fn instance_contour(labels: &LabeledMask, label: u32, pixels: &[(usize, usize)]) -> Vec<Point2> {
    let (w, h) = (labels.width() as i64, labels.height() as i64);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && labels.get(x as usize, y as usize) == label;

    // pixels arrive in raster order; trace each 8-connected piece once
    let mut pieces: Vec<Vec<Point2>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &(x, y) in pixels {
        if seen.contains(&(x, y)) {
            continue;
        }
        let mut stack = vec![(x, y)];
        seen.insert((x, y));
        while let Some((cx, cy)) = stack.pop() {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if inside(nx, ny) && seen.insert((nx as usize, ny as usize)) {
                        stack.push((nx as usize, ny as usize));
                    }
                }
            }
        }
        pieces.push(trace_outer_contour((x as i64, y as i64), inside));
    }
    if pieces.len() == 1 {
        pieces.pop().unwrap()
    } else {
        convex_hull(&pieces.concat())
    }
}

impl MfInstance {
    /// Contour translated to full-resolution coordinates.
    pub fn contour_fullres(&self) -> Vec<Point2> {
        let (dx, dy) = (f64::from(self.tile_offset.0), f64::from(self.tile_offset.1));
        self.contour.iter().map(|p| p.offset(dx, dy)).collect()
    }
}

/// Keeps instances whose long rectangle side is at least `min_width_um`.
pub fn filter_small(instances: Vec<MfInstance>, mpp: MicronsPerPixel, min_width_um: f64) -> Vec<MfInstance> {
    instances
        .into_iter()
        .filter(|inst| inst.min_rect.long_side() * mpp.value() >= min_width_um)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessParams {
    pub min_width_um: f64,
    pub max_interpolar_um: f64,
    pub connectivity: Connectivity,
    /// Run the tile-local dilation merge.
    pub local_merge: bool,
    /// Run the cross-tile center merge.
    pub global_merge: bool,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self {
            min_width_um: DEFAULT_MIN_WIDTH_UM,
            max_interpolar_um: DEFAULT_MAX_INTERPOLAR_UM,
            connectivity: Connectivity::Eight,
            local_merge: true,
            global_merge: true,
        }
    }
}

/// Tile-local post-processing of one binary detector mask.
pub fn process_tile(
    mask: &BinaryMask,
    tile_offset: (u32, u32),
    mpp: MicronsPerPixel,
    params: &PostprocessParams,
) -> Result<Vec<MfInstance>> {
    let labels = label_instances(mask, params.connectivity);
    let kept = filter_small(extract_instances(&labels, tile_offset, mpp)?, mpp, params.min_width_um);
    if !params.local_merge {
        return Ok(kept);
    }
    let keep: Vec<bool> = {
        let mut k = vec![false; labels.count() as usize + 1];
        for inst in &kept {
            k[inst.label as usize] = true;
        }
        k
    };
    let filtered = BinaryMask::new(
        mask.width(),
        mask.height(),
        labels.labels().iter().map(|&l| l != 0 && keep[l as usize]).collect(),
    )?;
    let merged = merge_interpolar(&filtered, mpp, params.max_interpolar_um)?;
    extract_instances(&merged, tile_offset, mpp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideFigures {
    /// Instances from all tiles, before the cross-tile merge.
    pub instances: Vec<MfInstance>,
    /// Final figure centers in full-resolution pixels.
    pub centers: Vec<Point2>,
    /// Instance indices merged into each center.
    pub clusters: Vec<Vec<usize>>,
}

/// Runs [`process_tile`] over every tile and merges across tile borders.
pub fn process_slide(
    tiles: &[((u32, u32), BinaryMask)],
    mpp: MicronsPerPixel,
    params: &PostprocessParams,
) -> Result<SlideFigures> {
    let mut instances = Vec::new();
    for (offset, mask) in tiles {
        instances.extend(process_tile(mask, *offset, mpp, params)?);
    }
    let raw: Vec<Point2> = instances.iter().map(|i| i.center_fullres).collect();
    let (centers, clusters) = if params.global_merge {
        let merged = merge_global(&raw, mpp, params.max_interpolar_um)?;
        (merged.centers, merged.clusters)
    } else {
        (raw.clone(), (0..raw.len()).map(|i| vec![i]).collect())
    };
    Ok(SlideFigures {
        instances,
        centers,
        clusters,
    })
}
