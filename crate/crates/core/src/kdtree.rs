//! Static 2-d tree for closed axis-aligned box (L∞ ball) range queries.
//!
//! The tree is implicit: nodes live in a permutation of the input indices,
//! each node being the median of its slice. Every node also stores the
//! bounding box of its subtree so that queries can count whole subtrees
//! without descending into them.

use crate::error::{Error, Result};
use crate::units::Point2;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Bounds {
    min: Point2,
    max: Point2,
}

/// Closed query box `[lo.x, hi.x] × [lo.y, hi.y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryBox {
    pub lo: Point2,
    pub hi: Point2,
}

impl QueryBox {
    /// The closed L∞ ball of radius `r` around `center`.
    pub fn around(center: Point2, r: f64) -> Self {
        Self {
            lo: Point2::new(center.x - r, center.y - r),
            hi: Point2::new(center.x + r, center.y + r),
        }
    }

    /// Square of side `side` whose low corner is `corner`.
    pub fn from_corner(corner: Point2, side: f64) -> Self {
        Self {
            lo: corner,
            hi: Point2::new(corner.x + side, corner.y + side),
        }
    }

    #[inline]
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.lo.x && p.x <= self.hi.x && p.y >= self.lo.y && p.y <= self.hi.y
    }

    #[inline]
    fn covers(&self, b: &Bounds) -> bool {
        self.contains(b.min) && self.contains(b.max)
    }

    #[inline]
    fn misses(&self, b: &Bounds) -> bool {
        b.max.x < self.lo.x || b.min.x > self.hi.x || b.max.y < self.lo.y || b.min.y > self.hi.y
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RangeHits {
    pub count: usize,
    /// Indices into the points the tree was built from, ascending.
    pub member_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct KdTree2 {
    points: Vec<Point2>,
    order: Vec<u32>,
    /// `points` permuted into tree order.
    sorted: Vec<Point2>,
    bounds: Vec<Bounds>,
}

const SCAN_BELOW: usize = 8;

impl KdTree2 {
    /// Balanced build by median splits on alternating axes, `O(n log n)`.
    pub fn build(points: &[Point2]) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("k-d tree points must be finite, got {p:?}")));
        }
        if points.len() > u32::MAX as usize {
            return Err(Error::invalid("too many points for the k-d tree"));
        }
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            sorted: Vec::new(),
            bounds: vec![
                Bounds {
                    min: Point2::default(),
                    max: Point2::default()
                };
                points.len()
            ],
        };
        tree.build_range(0, points.len(), 0);
        tree.sorted = tree.order.iter().map(|&i| points[i as usize]).collect();
        Ok(tree)
    }

    fn build_range(&mut self, lo: usize, hi: usize, depth: usize) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let points = &self.points;
        let key = |i: &u32| {
            let p = points[*i as usize];
            if depth.is_multiple_of(2) {
                p.x
            } else {
                p.y
            }
        };
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |a, b| key(a).total_cmp(&key(b)));
        let mut b = Bounds {
            min: Point2::new(f64::INFINITY, f64::INFINITY),
            max: Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        for &i in &self.order[lo..hi] {
            let p = self.points[i as usize];
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
        }
        self.bounds[mid] = b;
        self.build_range(lo, mid, depth + 1);
        self.build_range(mid + 1, hi, depth + 1);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn depth(&self) -> usize {
        fn rec(lo: usize, hi: usize) -> usize {
            if lo >= hi {
                0
            } else {
                let mid = lo + (hi - lo) / 2;
                1 + rec(lo, mid).max(rec(mid + 1, hi))
            }
        }
        rec(0, self.points.len())
    }

    /// Points with `chebyshev(p, center) <= r`, i.e. inside the closed box
    /// `[center - r, center + r]²`.
    pub fn range_count(&self, center: Point2, r: f64) -> Result<RangeHits> {
        if r.is_nan() || r < 0.0 {
            return Err(Error::invalid(format!("query radius must be non-negative, got {r}")));
        }
        if !center.is_finite() {
            return Err(Error::invalid("query center must be finite"));
        }
        Ok(self.query(&QueryBox::around(center, r)))
    }

    pub fn query(&self, q: &QueryBox) -> RangeHits {
        let mut ids = Vec::new();
        self.collect(0, self.points.len(), q, &mut ids);
        ids.sort_unstable();
        RangeHits {
            count: ids.len(),
            member_ids: ids,
        }
    }

    /// Count-only query; whole subtrees inside the box are added in O(1).
    pub fn count(&self, q: &QueryBox) -> usize {
        self.count_range(0, self.points.len(), q)
    }

    fn count_range(&self, lo: usize, hi: usize, q: &QueryBox) -> usize {
        // depth is at most log2(n) + 1, and each level leaves one sibling pending
        let mut stack = [(0u32, 0u32); 64];
        let mut top = 0;
        let mut total = 0;
        let (mut lo, mut hi) = (lo, hi);
        loop {
            if hi - lo <= SCAN_BELOW {
                total += self.sorted[lo..hi].iter().filter(|p| q.contains(**p)).count();
            } else {
                let mid = lo + (hi - lo) / 2;
                let b = &self.bounds[mid];
                if q.covers(b) {
                    total += hi - lo;
                } else if !q.misses(b) {
                    total += q.contains(self.sorted[mid]) as usize;
                    stack[top] = (mid as u32 + 1, hi as u32);
                    top += 1;
                    hi = mid;
                    continue;
                }
            }
            if top == 0 {
                return total;
            }
            top -= 1;
            (lo, hi) = (stack[top].0 as usize, stack[top].1 as usize);
        }
    }

    fn collect(&self, lo: usize, hi: usize, q: &QueryBox, out: &mut Vec<usize>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let b = &self.bounds[mid];
        if q.misses(b) {
            return;
        }
        if q.covers(b) {
            out.extend(self.order[lo..hi].iter().map(|&i| i as usize));
            return;
        }
        if q.contains(self.points[self.order[mid] as usize]) {
            out.push(self.order[mid] as usize);
        }
        self.collect(lo, mid, q, out);
        self.collect(mid + 1, hi, q, out);
    }
}
