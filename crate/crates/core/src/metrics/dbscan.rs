//! DBSCAN over a subset of cloud points.
//!
//! A point is core when at least `min_pts` points (itself included) lie
//! within `eps`. Clusters are the connected components of core points under
//! the `eps` neighbour relation. A non-core point within `eps` of some core
//! point joins the cluster of its nearest core neighbour (ties broken by the
//! lexicographically smallest core coordinates); everything else is noise.
//! This makes the partition independent of input order.

use std::cmp::Ordering;

use super::object::{InstanceSet, Provenance};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::KdTree;

pub fn dbscan(cloud: &PointCloud, indices: &[usize], eps: f64, min_pts: usize) -> Result<InstanceSet> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::InvalidConfig(format!(
            "dbscan needs eps > 0 and min_pts >= 1, got eps={eps} min_pts={min_pts}"
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            found: bad + 1,
        });
    }
    let coords: Vec<[f64; 3]> = indices.iter().map(|&i| cloud.point(i).xyz()).collect();
    let tree = KdTree::build(coords.clone());
    let n = coords.len();

    let neighbours: Vec<Vec<(usize, f64)>> = coords
        .iter()
        .map(|c| {
            let mut v = Vec::new();
            tree.radius_visit(c, eps, |j, d2| v.push((j, d2)));
            v
        })
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut uf = UnionFind::new(n);
    for a in (0..n).filter(|&a| core[a]) {
        for &(b, _) in &neighbours[a] {
            if core[b] {
                uf.union(a, b);
            }
        }
    }

    let lex = |a: usize, b: usize| -> Ordering {
        (0..3)
            .map(|k| coords[a][k].total_cmp(&coords[b][k]))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    };
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for a in 0..n {
        if core[a] {
            owner[a] = Some(uf.find(a));
            continue;
        }
        owner[a] = neighbours[a]
            .iter()
            .filter(|(b, _)| core[*b])
            .min_by(|x, y| x.1.total_cmp(&y.1).then_with(|| lex(x.0, y.0)))
            .map(|&(b, _)| uf.find(b));
    }

    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (a, o) in owner.iter().enumerate() {
        if let Some(root) = o {
            groups.entry(*root).or_default().push(indices[a]);
        }
    }
    InstanceSet::new(groups.into_values().collect(), Provenance::Predicted)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so roots are stable.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
