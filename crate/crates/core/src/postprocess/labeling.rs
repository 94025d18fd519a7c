use serde::{Deserialize, Serialize};

use crate::raster::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u8) -> Option<Self> {
        match n {
            4 => Some(Self::Four),
            8 => Some(Self::Eight),
            _ => None,
        }
    }
}

/// Instance label image. `0` is background; instances are `1..=count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMask {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: u32,
}

impl LabeledMask {
    pub(crate) fn from_parts(width: usize, height: usize, labels: Vec<u32>, count: u32) -> Self {
        debug_assert_eq!(labels.len(), width * height);
        Self {
            width,
            height,
            labels,
            count,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of instances `K`.
    pub fn count(&self) -> u32 {
        self.count
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn foreground(&self) -> BinaryMask {
        BinaryMask::new(self.width, self.height, self.labels.iter().map(|&l| l != 0).collect())
            .expect("same dimensions")
    }

    /// Mask of a single instance.
    pub fn instance_mask(&self, label: u32) -> BinaryMask {
        BinaryMask::new(self.width, self.height, self.labels.iter().map(|&l| l == label).collect())
            .expect("same dimensions")
    }

    /// Pixel coordinates grouped by label; index `i` holds label `i + 1`.
    pub fn pixels_by_label(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.count as usize];
        for y in 0..self.height {
            for x in 0..self.width {
                let l = self.get(x, y);
                if l != 0 {
                    out[l as usize - 1].push((x, y));
                }
            }
        }
        out
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let grand = self.parent[self.parent[a as usize] as usize];
            self.parent[a as usize] = grand;
            a = grand;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass connected-component labeling.
///
/// Final labels are dense and follow raster-scan order of each component's
/// first pixel.
pub fn label_instances(mask: &BinaryMask, connectivity: Connectivity) -> LabeledMask {
    let (w, h) = (mask.width(), mask.height());
    let mut provisional = vec![0u32; w * h];
    let mut uf = UnionFind::new();

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbors[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                push(provisional[y * w + x - 1]);
            }
            if y > 0 {
                push(provisional[(y - 1) * w + x]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(provisional[(y - 1) * w + x - 1]);
                    }
                    if x + 1 < w {
                        push(provisional[(y - 1) * w + x + 1]);
                    }
                }
            }
            let label = if n == 0 {
                uf.make()
            } else {
                let first = neighbors[0];
                for &other in &neighbors[1..n] {
                    uf.union(first, other);
                }
                first
            };
            provisional[y * w + x] = label;
        }
    }

    let mut remap = vec![0u32; uf.parent.len()];
    let mut next = 0u32;
    for l in provisional.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = uf.find(*l) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        *l = remap[root];
    }
    LabeledMask::from_parts(w, h, provisional, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    /// BFS flood fill in raster order of seeds.
    fn flood_fill_oracle(mask: &BinaryMask, conn: Connectivity) -> (Vec<u32>, u32) {
        let (w, h) = (mask.width() as isize, mask.height() as isize);
        let mut labels = vec![0u32; mask.bits().len()];
        let mut k = 0;
        let offsets: &[(isize, isize)] = match conn {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
        };
        for sy in 0..h {
            for sx in 0..w {
                let si = (sy * w + sx) as usize;
                if !mask.bits()[si] || labels[si] != 0 {
                    continue;
                }
                k += 1;
                labels[si] = k;
                let mut q = VecDeque::from([(sx, sy)]);
                while let Some((x, y)) = q.pop_front() {
                    for &(dx, dy) in offsets {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let ni = (ny * w + nx) as usize;
                        if mask.bits()[ni] && labels[ni] == 0 {
                            labels[ni] = k;
                            q.push_back((nx, ny));
                        }
                    }
                }
            }
        }
        (labels, k)
    }

    fn parse(rows: &[&str]) -> BinaryMask {
        BinaryMask::from_fn(rows[0].len(), rows.len(), |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn empty_mask_has_no_instances() {
        assert_eq!(label_instances(&BinaryMask::empty(5, 5), Connectivity::Eight).count(), 0);
    }

    #[test]
    fn diagonal_touch_depends_on_connectivity() {
        let m = parse(&["##..", "##..", "..##", "..##"]);
        assert_eq!(flood_fill_oracle(&m, Connectivity::Eight).1, 1);
        assert_eq!(flood_fill_oracle(&m, Connectivity::Four).1, 2);
        assert_eq!(label_instances(&m, Connectivity::Eight).count(), 1);
        assert_eq!(label_instances(&m, Connectivity::Four).count(), 2);
    }

    #[test]
    fn disjoint_squares_raster_order() {
        let m = parse(&["##...##", "##...##", ".......", "...##..", "...##.."]);
        let l = label_instances(&m, Connectivity::Eight);
        assert_eq!(l.count(), 3);
        assert_eq!(l.get(0, 0), 1);
        assert_eq!(l.get(5, 0), 2);
        assert_eq!(l.get(3, 3), 3);
    }

    #[test]
    fn u_shape_merges_late() {
        // the two arms only join on the last row
        let m = parse(&["#...#", "#...#", "#####"]);
        let l = label_instances(&m, Connectivity::Four);
        assert_eq!(l.count(), 1);
        assert!(l.labels().iter().all(|&v| v <= 1));
    }

    fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
        (1usize..24, 1usize..24, 0.1..0.7f64).prop_flat_map(|(w, h, p)| {
            proptest::collection::vec(proptest::bool::weighted(p), w * h)
                .prop_map(move |bits| BinaryMask::new(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn labeling_matches_flood_fill(m in mask_strategy(), four in any::<bool>()) {
            let conn = if four { Connectivity::Four } else { Connectivity::Eight };
            let (oracle, k) = flood_fill_oracle(&m, conn);
            let got = label_instances(&m, conn);
            prop_assert_eq!(got.count(), k);
            // both assign labels by raster order of first pixel, so equal exactly
            prop_assert_eq!(got.labels(), &oracle[..]);
        }
    }
}
