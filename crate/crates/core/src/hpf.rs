//! Exact maximum-count 10HPF search.
//!
//! An optimal axis-aligned square can always be slid right/up until its low
//! x edge and low y edge both touch points, so the low corners worth testing
//! are the cartesian product of distinct point x and y coordinates. Each
//! candidate is scored with a closed-square range count; the k-d tree answers
//! those in sublinear time while [`brute_force_best_hpf`] scans linearly.
//!
//! Both algorithms share one membership predicate ([`QueryBox::contains`] on
//! the square anchored at the candidate corner) and one tie-break (smallest
//! center, lexicographic), so they agree exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::{KdTree2, QueryBox};
use crate::units::{HpfGeometry, Point2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpfRegion {
    /// `None` only for an empty input.
    pub center: Option<Point2>,
    pub radius_px: f64,
    pub count: usize,
    pub member_ids: Vec<usize>,
}

impl HpfRegion {
    fn empty(radius_px: f64) -> Self {
        Self {
            center: None,
            radius_px,
            count: 0,
            member_ids: Vec::new(),
        }
    }

    /// The covered square, closed on all sides.
    pub fn square(&self) -> Option<QueryBox> {
        self.center.map(|c| QueryBox::from_corner(c.offset(-self.radius_px, -self.radius_px), 2.0 * self.radius_px))
    }
}

fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Low corners `S_X × S_Y` in lexicographic order, coordinates deduplicated.
fn candidate_corners(points: &[Point2]) -> (Vec<f64>, Vec<f64>) {
    (
        distinct_sorted(points.iter().map(|p| p.x)),
        distinct_sorted(points.iter().map(|p| p.y)),
    )
}

/// Candidate region centers `(x_i + r, y_j + r)` over distinct coordinates.
pub fn candidate_centers(points: &[Point2], r: f64) -> Result<Vec<Point2>> {
    if points.is_empty() {
        return Err(Error::invalid("candidate centers need at least one point"));
    }
    validate(points, r)?;
    let (xs, ys) = candidate_corners(points);
    Ok(xs
        .iter()
        .flat_map(|&x| ys.iter().map(move |&y| Point2::new(x + r, y + r)))
        .collect())
}

fn validate(points: &[Point2], r: f64) -> Result<()> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::invalid(format!("hpf radius must be non-negative, got {r}")));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("hpf points must be finite"));
    }
    Ok(())
}

trait SquareCounter {
    fn count(&self, q: &QueryBox) -> usize;
    /// Count over a box enclosing several candidates, if cheap to get.
    fn bound(&self, q: &QueryBox) -> Option<usize>;
}

struct Best(Option<(usize, Point2)>);

impl Best {
    fn beaten_by(&self, c: usize) -> bool {
        self.0.is_none_or(|(bc, _)| c > bc)
    }
}

/// Scores the candidates `(x, y)` for `y` in `ys`, in order. A block whose
/// enclosing box cannot beat the current best is skipped whole.
fn scan_column(x: f64, ys: &[f64], side: f64, counter: &impl SquareCounter, best: &mut Best) {
    if let [y] = ys {
        let corner = Point2::new(x, *y);
        let c = counter.count(&QueryBox::from_corner(corner, side));
        if best.beaten_by(c) {
            best.0 = Some((c, corner));
        }
        return;
    }
    let enclosing = QueryBox {
        lo: Point2::new(x, ys[0]),
        hi: QueryBox::from_corner(Point2::new(x, ys[ys.len() - 1]), side).hi,
    };
    if counter.bound(&enclosing).is_some_and(|ub| !best.beaten_by(ub)) {
        return;
    }
    let (low, high) = ys.split_at(ys.len() / 2);
    scan_column(x, low, side, counter, best);
    scan_column(x, high, side, counter, best);
}

fn search(points: &[Point2], geom: &HpfGeometry, counter: &impl SquareCounter) -> Result<HpfRegion> {
    let r = geom.radius_px;
    validate(points, r)?;
    if points.is_empty() {
        return Ok(HpfRegion::empty(r));
    }
    let side = 2.0 * r;
    let (xs, ys) = candidate_corners(points);
    let mut best = Best(None);
    for &x in &xs {
        scan_column(x, &ys, side, counter, &mut best);
    }
    let (_, corner) = best.0.expect("non-empty candidate set");
    let square = QueryBox::from_corner(corner, side);
    let member_ids: Vec<usize> = (0..points.len()).filter(|&i| square.contains(points[i])).collect();
    Ok(HpfRegion {
        center: Some(corner.offset(r, r)),
        radius_px: r,
        count: member_ids.len(),
        member_ids,
    })
}

impl SquareCounter for KdTree2 {
    fn count(&self, q: &QueryBox) -> usize {
        KdTree2::count(self, q)
    }

    fn bound(&self, q: &QueryBox) -> Option<usize> {
        Some(KdTree2::count(self, q))
    }
}

struct LinearScan<'a>(&'a [Point2]);

impl SquareCounter for LinearScan<'_> {
    fn count(&self, q: &QueryBox) -> usize {
        self.0.iter().filter(|p| q.contains(**p)).count()
    }

    fn bound(&self, _: &QueryBox) -> Option<usize> {
        None
    }
}

/// k-d tree search over all candidate squares.
///
/// Candidates are visited in the same order as the brute-force scan, but a
/// run of candidates in one column is first bounded by a single range count
/// over the box enclosing all of their squares; runs that cannot strictly
/// beat the best so far are skipped, which leaves the result unchanged.
pub fn find_best_hpf(points: &[Point2], geom: &HpfGeometry) -> Result<HpfRegion> {
    validate(points, geom.radius_px)?;
    let tree = KdTree2::build(points)?;
    search(points, geom, &tree)
}

/// Linear scan per candidate, `O(n³)`. Reference oracle for [`find_best_hpf`].
pub fn brute_force_best_hpf(points: &[Point2], geom: &HpfGeometry) -> Result<HpfRegion> {
    search(points, geom, &LinearScan(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{hpf_geometry, MicronsPerPixel};
    use proptest::prelude::*;

    fn geom(r: f64) -> HpfGeometry {
        HpfGeometry {
            area_mm2: 0.0,
            side_px: 2.0 * r,
            radius_px: r,
        }
    }

    #[test]
    fn candidate_center_examples() {
        let c = candidate_centers(&[Point2::new(0.0, 0.0), Point2::new(10.0, 20.0)], 5.0).unwrap();
        assert_eq!(
            c,
            vec![Point2::new(5.0, 5.0), Point2::new(5.0, 25.0), Point2::new(15.0, 5.0), Point2::new(15.0, 25.0)]
        );
        assert_eq!(candidate_centers(&[Point2::new(3.0, 4.0)], 2.0).unwrap(), vec![Point2::new(5.0, 6.0)]);
        assert_eq!(
            candidate_centers(&[Point2::new(0.0, 0.0), Point2::new(0.0, 7.0)], 1.0).unwrap(),
            vec![Point2::new(1.0, 1.0), Point2::new(1.0, 8.0)]
        );
        assert!(candidate_centers(&[], 1.0).is_err());
    }

    #[test]
    fn cluster_beats_outlier() {
        let g = hpf_geometry(MicronsPerPixel::new(1.0).unwrap());
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(2.0, 2.0), Point2::new(1e6, 1e6)];
        let kd = find_best_hpf(&pts, &g).unwrap();
        let bf = brute_force_best_hpf(&pts, &g).unwrap();
        assert_eq!(kd.count, 3);
        assert_eq!(kd, bf);
        assert_eq!(kd.member_ids, vec![0, 1, 2]);
    }

    #[test]
    fn single_point_region() {
        let g = geom(769.74);
        let r = find_best_hpf(&[Point2::new(3.0, 4.0)], &g).unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.center, Some(Point2::new(3.0 + 769.74, 4.0 + 769.74)));
    }

    #[test]
    fn empty_input_is_distinguished() {
        let r = find_best_hpf(&[], &geom(5.0)).unwrap();
        assert_eq!(r.count, 0);
        assert!(r.center.is_none());
    }

    #[test]
    fn far_apart_and_coincident() {
        let g = geom(10.0);
        let far = [Point2::new(0.0, 0.0), Point2::new(25.0, 0.0)];
        assert_eq!(brute_force_best_hpf(&far, &g).unwrap().count, 1);
        let same = vec![Point2::new(4.0, 4.0); 9];
        assert_eq!(brute_force_best_hpf(&same, &g).unwrap().count, 9);
        assert_eq!(find_best_hpf(&same, &g).unwrap().count, 9);
    }

    #[test]
    fn ties_prefer_smallest_center() {
        let g = geom(1.0);
        let pts = [Point2::new(10.0, 0.0), Point2::new(0.0, 10.0), Point2::new(0.0, 0.0)];
        let r = find_best_hpf(&pts, &g).unwrap();
        assert_eq!(r.center, Some(Point2::new(1.0, 1.0)));
        assert_eq!(r.member_ids, vec![2]);
    }

    fn cloud() -> impl Strategy<Value = Vec<Point2>> {
        proptest::collection::vec((0.0..300.0f64, 0.0..300.0f64).prop_map(|(x, y)| Point2::new(x, y)), 1..40)
    }

    proptest! {
        #[test]
        fn kd_equals_brute(pts in cloud(), r in 1.0..80.0f64) {
            let g = geom(r);
            prop_assert_eq!(find_best_hpf(&pts, &g).unwrap(), brute_force_best_hpf(&pts, &g).unwrap());
        }

        #[test]
        fn kd_equals_brute_with_many_ties(pts in proptest::collection::vec((0u8..12, 0u8..12), 1..60), r in 0u8..6) {
            // small integer lattice: coincident points, shared edges, tied counts
            let g = geom(f64::from(r));
            let pts: Vec<Point2> = pts.iter().map(|&(x, y)| Point2::new(f64::from(x), f64::from(y))).collect();
            prop_assert_eq!(find_best_hpf(&pts, &g).unwrap(), brute_force_best_hpf(&pts, &g).unwrap());
        }

        #[test]
        fn adding_a_point_never_lowers_the_count(pts in cloud(), extra in (0.0..300.0f64, 0.0..300.0f64), r in 1.0..80.0f64) {
            let g = geom(r);
            let before = find_best_hpf(&pts, &g).unwrap().count;
            let mut more = pts.clone();
            more.push(Point2::new(extra.0, extra.1));
            prop_assert!(find_best_hpf(&more, &g).unwrap().count >= before);
        }

        #[test]
        fn translation_moves_center(pts in proptest::collection::vec((0i32..300, 0i32..300), 1..30), dx in -500i32..500, dy in -500i32..500) {
            // integer coordinates keep the shifted arithmetic exact
            let g = geom(16.0);
            let a: Vec<Point2> = pts.iter().map(|&(x, y)| Point2::new(x as f64, y as f64)).collect();
            let b: Vec<Point2> = a.iter().map(|p| p.offset(dx as f64, dy as f64)).collect();
            let ra = find_best_hpf(&a, &g).unwrap();
            let rb = find_best_hpf(&b, &g).unwrap();
            prop_assert_eq!(ra.count, rb.count);
            prop_assert_eq!(ra.center.unwrap().offset(dx as f64, dy as f64), rb.center.unwrap());
        }
    }
}
