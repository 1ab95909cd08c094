//! Point cloud containers and SemanticKITTI scan I/O.
//!
//! A scan is stored as a `.bin` file of `N` records, each four little-endian
//! `f32` values `(x, y, z, intensity)`, with an optional sibling `.label` file
//! of `N` little-endian `u32` labels. The low 16 bits of a label are the
//! semantic class and the high 16 bits the instance id.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// SemanticKITTI `unlabeled`; excluded from training and evaluation.
pub const UNLABELED: u16 = 0;
pub const CAR: u16 = 10;
pub const ROAD: u16 = 40;
pub const BUILDING: u16 = 50;
pub const POLE: u16 = 80;
/// Reserved id for synthesized anomalies. Unused by SemanticKITTI.
pub const RAISED_CLASS: u16 = 1000;

const POINT_BYTES: usize = 16;
const LABEL_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Point { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }

    /// Euclidean distance from the sensor origin.
    pub fn range(&self) -> f64 {
        let [x, y, z] = self.xyz();
        (x * x + y * y + z * z).sqrt()
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// A single LiDAR scan in sensor coordinates (sensor at the origin).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite values.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    pub(crate) fn points_mut(&mut self) -> &mut [Point] {
        &mut self.points
    }

    /// Returns the cloud translated by `(dx, dy)`; used by invariance checks.
    pub fn translated_xy(&self, dx: f32, dy: f32) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy, p.z, p.intensity))
                .collect(),
        }
    }
}

/// Per-point labels in SemanticKITTI encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    labels: Vec<u32>,
    raised_class: u16,
}

impl LabelMap {
    pub fn new(labels: Vec<u32>) -> Self {
        Self::with_raised_class(labels, RAISED_CLASS)
    }

    pub fn with_raised_class(labels: Vec<u32>, raised_class: u16) -> Self {
        LabelMap {
            labels,
            raised_class,
        }
    }

    /// A map of `n` points all carrying `class` with instance 0.
    pub fn uniform(n: usize, class: u16) -> Self {
        Self::new(vec![class as u32; n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn raw(&self) -> &[u32] {
        &self.labels
    }

    pub fn raised_class(&self) -> u16 {
        self.raised_class
    }

    pub fn semantic(&self, i: usize) -> u16 {
        (self.labels[i] & 0xFFFF) as u16
    }

    pub fn instance(&self, i: usize) -> u16 {
        (self.labels[i] >> 16) as u16
    }

    pub fn is_raised(&self, i: usize) -> bool {
        self.semantic(i) == self.raised_class
    }

    pub fn set(&mut self, i: usize, semantic: u16, instance: u16) {
        self.labels[i] = encode_label(semantic, instance);
    }

    pub fn check_aligned(&self, cloud: &PointCloud) -> Result<()> {
        if self.len() != cloud.len() {
            return Err(Error::LengthMismatch {
                expected: cloud.len(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

pub fn encode_label(semantic: u16, instance: u16) -> u32 {
    ((instance as u32) << 16) | semantic as u32
}

/// Location of the `.label` file paired with a `.bin` scan.
///
/// Looks next to the scan first, then in the SemanticKITTI layout
/// `sequences/XX/velodyne/NNNNNN.bin` → `sequences/XX/labels/NNNNNN.label`.
pub fn label_path_for(scan: &Path) -> Option<PathBuf> {
    let sibling = scan.with_extension("label");
    if sibling.is_file() {
        return Some(sibling);
    }
    let stem = scan.file_stem()?;
    let dir = scan.parent()?;
    if dir.file_name()? != "velodyne" {
        return None;
    }
    let kitti = dir
        .parent()?
        .join("labels")
        .join(stem)
        .with_extension("label");
    kitti.is_file().then_some(kitti)
}

pub fn decode_points(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % POINT_BYTES != 0 {
        return Err(Error::format(
            path,
            format!(
                "size {} is not a multiple of {POINT_BYTES} bytes",
                bytes.len()
            ),
        ));
    }
    let points: Vec<Point> = bytes
        .chunks_exact(POINT_BYTES)
        .map(|rec| {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            Point::new(f(0), f(1), f(2), f(3))
        })
        .collect();
    PointCloud::new(points).map_err(|e| Error::format(path, e.to_string()))
}

pub fn decode_labels(path: &Path, bytes: &[u8], expected: usize) -> Result<LabelMap> {
    if bytes.len() != expected * LABEL_BYTES {
        return Err(Error::format(
            path,
            format!(
                "expected {} bytes for {expected} labels, found {}",
                expected * LABEL_BYTES,
                bytes.len()
            ),
        ));
    }
    Ok(LabelMap::new(
        bytes
            .chunks_exact(LABEL_BYTES)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    ))
}

pub fn encode_points(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for p in cloud.points() {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn encode_labels(labels: &LabelMap) -> Vec<u8> {
    labels.raw().iter().flat_map(|l| l.to_le_bytes()).collect()
}

/// Reads a `.bin` scan and, when present, its `.label` file.
pub fn load_scan(path: impl AsRef<Path>) -> Result<(PointCloud, Option<LabelMap>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let cloud = decode_points(path, &bytes)?;
    let labels = match label_path_for(path) {
        Some(lp) => {
            let lb = fs::read(&lp).map_err(|e| Error::io(&lp, e))?;
            Some(decode_labels(&lp, &lb, cloud.len())?)
        }
        None => None,
    };
    Ok((cloud, labels))
}

/// Writes `path` (`.bin`) and its sibling `.label`.
pub fn save_scan(cloud: &PointCloud, labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    labels.check_aligned(cloud)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_points(cloud)).map_err(|e| Error::io(path, e))?;
    let lp = path.with_extension("label");
    fs::write(&lp, encode_labels(labels)).map_err(|e| Error::io(&lp, e))?;
    Ok(())
}
