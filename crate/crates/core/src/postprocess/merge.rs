use serde::{Deserialize, Serialize};

use super::labeling::{label_instances, Connectivity, LabeledMask};
use crate::error::{Error, Result};
use crate::kdtree::{KdTree2, QueryBox};
use crate::raster::BinaryMask;
use crate::units::{microns_to_pixels, MicronsPerPixel, Point2};

/// 3×3 dilation iterations so that each instance grows by half the
/// interpolar distance; rounded up.
pub fn dilation_iterations(mpp: MicronsPerPixel, max_interpolar_um: f64) -> Result<usize> {
    let px = microns_to_pixels(max_interpolar_um / 2.0, mpp)?;
    // guard against 30.000000000004-style representation noise
    Ok((px - 1e-9).ceil().max(0.0) as usize)
}

/// Tile-local merge of instances lying within the interpolar distance.
///
/// The mask is dilated, the dilated mask is labeled, and each original
/// foreground pixel takes the label of the dilated component covering it.
/// Labels are renumbered densely in raster order of the original pixels.
pub fn merge_interpolar(mask: &BinaryMask, mpp: MicronsPerPixel, max_interpolar_um: f64) -> Result<LabeledMask> {
    let iterations = dilation_iterations(mpp, max_interpolar_um)?;
    let markers = label_instances(&mask.dilate(iterations), Connectivity::Eight);
    let mut remap = vec![0u32; markers.count() as usize + 1];
    let mut next = 0;
    let labels = mask
        .bits()
        .iter()
        .zip(markers.labels())
        .map(|(&fg, &marker)| {
            if !fg {
                return 0;
            }
            if remap[marker as usize] == 0 {
                next += 1;
                remap[marker as usize] = next;
            }
            remap[marker as usize]
        })
        .collect();
    Ok(LabeledMask::from_parts(mask.width(), mask.height(), labels, next))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMerge {
    /// One center per cluster: the mean of its member input points.
    pub centers: Vec<Point2>,
    /// Input indices per cluster, ascending; clusters ordered by first member.
    pub clusters: Vec<Vec<usize>>,
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Cross-tile merge of figure centers within the interpolar distance.
///
/// Pairs closer than `max_interpolar_um` (Euclidean, inclusive) are linked
/// through a k-d tree neighbor search and linked clusters are unioned. Merged
/// centroids can land within range of another cluster, so linking repeats on
/// the centroids until no pair is in range; the result is a fixpoint and
/// merging it again changes nothing.
pub fn merge_global(centers: &[Point2], mpp: MicronsPerPixel, max_interpolar_um: f64) -> Result<GlobalMerge> {
    let radius = microns_to_pixels(max_interpolar_um, mpp)?;
    if centers.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("figure centers must be finite"));
    }
    let mut clusters: Vec<Vec<usize>> = (0..centers.len()).map(|i| vec![i]).collect();
    let mut current: Vec<Point2> = centers.to_vec();
    loop {
        let tree = KdTree2::build(&current)?;
        let mut dsu = Dsu((0..current.len()).collect());
        let mut linked = false;
        for (i, &p) in current.iter().enumerate() {
            // the L∞ box of radius d contains the Euclidean disc of radius d
            for j in tree.query(&QueryBox::around(p, radius)).member_ids {
                if j > i && p.euclidean(current[j]) <= radius {
                    linked |= dsu.union(i, j);
                }
            }
        }
        if !linked {
            break;
        }
        let mut grouped: Vec<Vec<usize>> = vec![Vec::new(); current.len()];
        for (i, members) in clusters.iter().enumerate() {
            let root = dsu.find(i);
            grouped[root].extend_from_slice(members);
        }
        clusters = grouped
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        clusters.sort_by_key(|g| g[0]);
        current = clusters.iter().map(|g| centroid(centers, g)).collect();
    }
    Ok(GlobalMerge {
        centers: current,
        clusters,
    })
}

fn centroid(points: &[Point2], members: &[usize]) -> Point2 {
    let n = members.len() as f64;
    let (sx, sy) = members
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &i| (sx + points[i].x, sy + points[i].y));
    Point2::new(sx / n, sy / n)
}
