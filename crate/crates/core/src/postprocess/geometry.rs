//! Pixel-boundary contours, convex hulls and minimum-area rectangles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::Point2;

/// Minimum-area enclosing rectangle. `width` runs along `angle_deg`
/// (normalized to `[0, 90)`), `height` along the perpendicular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: Point2,
    pub width: f64,
    pub height: f64,
    pub angle_deg: f64,
}

impl RotatedRect {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn long_side(&self) -> f64 {
        self.width.max(self.height)
    }
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew's monotone chain. Collinear points are dropped, so a degenerate
/// input yields one point or the two endpoints of a segment.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<Point2> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    let mut hull = lower;
    if hull.len() == 2 && hull[0] == hull[1] {
        hull.pop();
    }
    hull
}

/// Rotating calipers over the convex hull of `contour`.
pub fn min_area_rect(contour: &[Point2]) -> Result<RotatedRect> {
    if contour.is_empty() {
        return Err(Error::invalid("min_area_rect needs at least one point"));
    }
    if contour.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("contour points must be finite"));
    }
    let hull = convex_hull(contour);
    match hull.len() {
        1 => Ok(RotatedRect {
            center: hull[0],
            width: 0.0,
            height: 0.0,
            angle_deg: 0.0,
        }),
        2 => {
            let (a, b) = (hull[0], hull[1]);
            let angle = (b.y - a.y).atan2(b.x - a.x).to_degrees();
            Ok(normalize(
                Point2::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0),
                a.euclidean(b),
                0.0,
                angle,
            ))
        }
        n => {
            let mut best: Option<(f64, RotatedRect)> = None;
            for i in 0..n {
                let (a, b) = (hull[i], hull[(i + 1) % n]);
                let len = a.euclidean(b);
                if len == 0.0 {
                    continue;
                }
                let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
                let (nx, ny) = (-uy, ux);
                let (mut u_lo, mut u_hi, mut n_lo, mut n_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
                for p in &hull {
                    let pu = p.x * ux + p.y * uy;
                    let pn = p.x * nx + p.y * ny;
                    u_lo = u_lo.min(pu);
                    u_hi = u_hi.max(pu);
                    n_lo = n_lo.min(pn);
                    n_hi = n_hi.max(pn);
                }
                let (w, h) = (u_hi - u_lo, n_hi - n_lo);
                let area = w * h;
                let improves = match &best {
                    None => true,
                    Some((best_area, _)) => area < best_area - 1e-9 * best_area.max(1.0),
                };
                if improves {
                    let cu = (u_lo + u_hi) / 2.0;
                    let cn = (n_lo + n_hi) / 2.0;
                    let center = Point2::new(cu * ux + cn * nx, cu * uy + cn * ny);
                    let angle = uy.atan2(ux).to_degrees();
                    best = Some((area, normalize(center, w, h, angle)));
                }
            }
            Ok(best.expect("hull with three vertices has a nonzero edge").1)
        }
    }
}

fn normalize(center: Point2, w: f64, h: f64, angle_deg: f64) -> RotatedRect {
    let quarter = (angle_deg / 90.0).floor();
    let mut angle = angle_deg - 90.0 * quarter;
    if angle >= 90.0 - 1e-9 {
        angle = 0.0;
    }
    if angle.abs() < 1e-9 {
        angle = 0.0;
    }
    let (width, height) = if (quarter as i64).rem_euclid(2) == 1 { (h, w) } else { (w, h) };
    RotatedRect {
        center,
        width,
        height,
        angle_deg: angle,
    }
}

/// Outer pixel-boundary contour of the 8-connected region containing the
/// raster-first pixel `start` under `inside`.
///
/// Vertices sit on the pixel-corner lattice, so a pixel `(x, y)` spans
/// `[x, x+1] × [y, y+1]`. Only corners are emitted. The walk keeps the region
/// on its right and turns toward diagonal neighbors, which keeps 8-connected
/// pieces inside a single outline.
pub fn trace_outer_contour(start: (i64, i64), inside: impl Fn(i64, i64) -> bool) -> Vec<Point2> {
    debug_assert!(inside(start.0, start.1));
    let pixel_ahead = |vx: i64, vy: i64, d: (i64, i64), side: (i64, i64)| {
        let sx = d.0 + side.0;
        let sy = d.1 + side.1;
        (vx + if sx > 0 { 0 } else { -1 }, vy + if sy > 0 { 0 } else { -1 })
    };
    let right = |d: (i64, i64)| (-d.1, d.0);
    let left = |d: (i64, i64)| (d.1, -d.0);

    let origin = start;
    let mut v = start;
    let mut d = (1i64, 0i64);
    let mut out = vec![Point2::new(v.0 as f64, v.1 as f64)];
    loop {
        v = (v.0 + d.0, v.1 + d.1);
        if v == origin {
            break;
        }
        let (alx, aly) = pixel_ahead(v.0, v.1, d, left(d));
        let (arx, ary) = pixel_ahead(v.0, v.1, d, right(d));
        let next = if inside(alx, aly) {
            left(d)
        } else if inside(arx, ary) {
            d
        } else {
            right(d)
        };
        if next != d {
            out.push(Point2::new(v.0 as f64, v.1 as f64));
            d = next;
        }
    }
    out
}

/// All four lattice corners of a pixel.
pub fn pixel_corners(x: f64, y: f64) -> [Point2; 4] {
    [
        Point2::new(x, y),
        Point2::new(x + 1.0, y),
        Point2::new(x + 1.0, y + 1.0),
        Point2::new(x, y + 1.0),
    ]
}
