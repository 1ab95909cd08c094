//! KD-tree radius search.

use crate::cloud::PointCloud;

const LEAF_SIZE: usize = 8;

/// Squared Euclidean distance. Shared by the tree and by callers that need
/// the identical boundary semantics.
#[inline]
pub fn squared_distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

/// Static balanced KD-tree stored implicitly in a permuted array.
///
/// Node for the slice `[lo, hi)` is the median at `(lo + hi) / 2`, split on
/// axis `depth % D`; slices no longer than [`LEAF_SIZE`] are scanned.
#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    coords: Vec<[f64; D]>,
    ids: Vec<usize>,
}

impl<const D: usize> KdTree<D> {
    pub fn build(points: Vec<[f64; D]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build_recursive(&points, &mut order, 0);
        let coords = order.iter().map(|&i| points[i]).collect();
        KdTree { coords, ids: order }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Indices of all points with distance `<= r` from `center`, unordered.
    pub fn radius_query(&self, center: &[f64; D], r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_visit(center, r, |i, _| out.push(i));
        out
    }

    /// Calls `f(index, squared_distance)` for every point within `r`.
    pub fn radius_visit<F: FnMut(usize, f64)>(&self, center: &[f64; D], r: f64, mut f: F) {
        if self.ids.is_empty() || !(r >= 0.0) {
            return;
        }
        self.visit(0, self.ids.len(), 0, center, r * r, &mut f);
    }

    fn visit<F: FnMut(usize, f64)>(
        &self,
        lo: usize,
        hi: usize,
        depth: usize,
        center: &[f64; D],
        r2: f64,
        f: &mut F,
    ) {
        if hi - lo <= LEAF_SIZE {
            for j in lo..hi {
                let d2 = squared_distance(&self.coords[j], center);
                if d2 <= r2 {
                    f(self.ids[j], d2);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = depth % D;
        let d2 = squared_distance(&self.coords[mid], center);
        if d2 <= r2 {
            f(self.ids[mid], d2);
        }
        let diff = center[axis] - self.coords[mid][axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.visit(near.0, near.1, depth + 1, center, r2, f);
        if diff * diff <= r2 {
            self.visit(far.0, far.1, depth + 1, center, r2, f);
        }
    }
}

fn build_recursive<const D: usize>(points: &[[f64; D]], order: &mut [usize], depth: usize) {
    if order.len() <= LEAF_SIZE {
        return;
    }
    let mid = order.len() / 2;
    let axis = depth % D;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (left, right) = order.split_at_mut(mid);
    build_recursive(points, left, depth + 1);
    build_recursive(points, &mut right[1..], depth + 1);
}

/// Spatial index over a cloud: a 3D tree for full Euclidean queries and a 2D
/// tree over `(x, y)` for ground-plane neighbourhoods.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    xyz: KdTree<3>,
    xy: KdTree<2>,
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Self {
        let xyz: Vec<[f64; 3]> = cloud.points().iter().map(|p| p.xyz()).collect();
        let xy = xyz.iter().map(|p| [p[0], p[1]]).collect();
        SpatialIndex {
            xyz: KdTree::build(xyz),
            xy: KdTree::build(xy),
        }
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    /// Points within 3D distance `r` (inclusive) of `center`.
    pub fn radius_query(&self, center: [f64; 3], r: f64) -> Vec<usize> {
        self.xyz.radius_query(&center, r)
    }

    pub fn radius_visit<F: FnMut(usize, f64)>(&self, center: [f64; 3], r: f64, f: F) {
        self.xyz.radius_visit(&center, r, f)
    }

    /// Points whose `(x, y)` lies within `r` of `center`, ignoring z.
    pub fn radius_query_xy(&self, center: [f64; 2], r: f64) -> Vec<usize> {
        self.xy.radius_query(&center, r)
    }
}
