//! Per-point geometric features consumed by the OOD projector.
//!
//! Column layout of [`extract_features`] (`FEATURE_DIM = 9`):
//!
//! | col | feature | formula |
//! |-----|---------|---------|
//! | 0 | height above ground | `z - g`, `g` = 5th percentile of z over points within 2 m in (x, y) |
//! | 1 | range | `sqrt(x² + y² + z²)` |
//! | 2 | density | `(n - 1) / (4/3 π 0.5³)`, `n` = points within 0.5 m (3D, self included) |
//! | 3..6 | covariance eigenvalues | eigenvalues of the 0.5 m neighbourhood covariance, descending |
//! | 6 | verticality | `1 - |n_z|`, `n` = eigenvector of the smallest eigenvalue (0 with < 3 points) |
//! | 7 | intensity | as stored |
//! | 8 | z-range | `max z - min z` over the 0.5 m neighbourhood |

use nalgebra::{Matrix3, SymmetricEigen};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;

pub const FEATURE_DIM: usize = 9;
pub const NEIGHBOR_RADIUS: f64 = 0.5;
pub const GROUND_RADIUS: f64 = 2.0;
pub const GROUND_PERCENTILE: f64 = 0.05;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "height",
    "range",
    "density",
    "eig1",
    "eig2",
    "eig3",
    "verticality",
    "intensity",
    "z_range",
];

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, cols: usize) -> Result<Self> {
        if cols == 0 || data.len() % cols != 0 {
            return Err(Error::DimensionMismatch {
                expected: cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("features must be finite".into()));
        }
        Ok(FeatureMatrix {
            rows: data.len() / cols,
            data,
            cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.cols).copied()
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            data,
            rows: rows.len(),
            cols: self.cols,
        }
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let cols = parts.first().map_or(FEATURE_DIM, |p| p.cols);
        let mut data = Vec::new();
        for p in parts {
            if p.cols != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: p.cols,
                });
            }
            data.extend_from_slice(&p.data);
        }
        Ok(FeatureMatrix {
            rows: data.len() / cols,
            data,
            cols,
        })
    }
}

/// Computes the [`FEATURE_DIM`] features for every point of `cloud`.
///
/// `index` must have been built over `cloud`.
pub fn extract_features(cloud: &PointCloud, index: &SpatialIndex) -> Result<FeatureMatrix> {
    if index.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            found: index.len(),
        });
    }
    let volume = 4.0 / 3.0 * std::f64::consts::PI * NEIGHBOR_RADIUS.powi(3);
    let mut data = Vec::with_capacity(cloud.len() * FEATURE_DIM);
    let mut zs = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let c = p.xyz();

        zs.clear();
        zs.extend(
            index
                .radius_query_xy([c[0], c[1]], GROUND_RADIUS)
                .into_iter()
                .map(|j| cloud.point(j).z as f64),
        );
        let ground = percentile(&mut zs, GROUND_PERCENTILE).unwrap_or(c[2]);

        // Moments relative to the query point.
        let mut n = 0usize;
        let mut s = [0.0f64; 3];
        let mut ss = [0.0f64; 6];
        let (mut zmin, mut zmax) = (c[2], c[2]);
        index.radius_visit(c, NEIGHBOR_RADIUS, |j, _| {
            let q = cloud.point(j).xyz();
            let d = [q[0] - c[0], q[1] - c[1], q[2] - c[2]];
            n += 1;
            for k in 0..3 {
                s[k] += d[k];
            }
            ss[0] += d[0] * d[0];
            ss[1] += d[0] * d[1];
            ss[2] += d[0] * d[2];
            ss[3] += d[1] * d[1];
            ss[4] += d[1] * d[2];
            ss[5] += d[2] * d[2];
            zmin = zmin.min(q[2]);
            zmax = zmax.max(q[2]);
        });
        debug_assert!(n >= 1, "point {i} missing from its own neighbourhood");

        let (eig, verticality) = if n >= 2 {
            let nf = n as f64;
            let m = [s[0] / nf, s[1] / nf, s[2] / nf];
            let cov = |a: f64, x: usize, y: usize| a / nf - m[x] * m[y];
            let (xx, xy, xz) = (cov(ss[0], 0, 0), cov(ss[1], 0, 1), cov(ss[2], 0, 2));
            let (yy, yz, zz) = (cov(ss[3], 1, 1), cov(ss[4], 1, 2), cov(ss[5], 2, 2));
            let mat = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
            let se = SymmetricEigen::new(mat);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
            let eig = order.map(|k| se.eigenvalues[k].max(0.0));
            let vert = if n >= 3 {
                1.0 - se.eigenvectors[(2, order[2])].abs()
            } else {
                0.0
            };
            (eig, vert)
        } else {
            ([0.0; 3], 0.0)
        };

        data.extend_from_slice(&[
            c[2] - ground,
            p.range(),
            (n - 1) as f64 / volume,
            eig[0],
            eig[1],
            eig[2],
            verticality,
            p.intensity as f64,
            zmax - zmin,
        ]);
    }
    FeatureMatrix::new(data, FEATURE_DIM)
}

/// Nearest-rank percentile: element `floor(q * (n - 1))` of the sorted values.
fn percentile(v: &mut [f64], q: f64) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let k = ((v.len() - 1) as f64 * q).floor() as usize;
    let (_, x, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Some(*x)
}
