//! Scenes of placed objects and the object-local normalisation.
//!
//! A point row is `[x, y, z, r, g, b]`. Normalised clouds keep coordinates
//! and colours in `[-1, 1]`; world rows keep metres and `[0, 255]` colours.
//! `z` is the vertical axis.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

pub const CHANNELS: usize = 6;
pub const DEFAULT_BOUNDS_MARGIN: f64 = 0.5;

pub type Point = [f64; CHANNELS];
pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct PointCloud {
    points: Vec<Point>,
}

impl TryFrom<Vec<Point>> for PointCloud {
    type Error = Error;

    fn try_from(points: Vec<Point>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<PointCloud> for Vec<Point> {
    fn from(c: PointCloud) -> Self {
        c.points
    }
}

impl PointCloud {
    /// Checks that there is at least one point and every entry is in `[-1, 1]`.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            bail!(DegenerateInput, "point cloud has no points");
        }
        for (i, p) in points.iter().enumerate() {
            if let Some(v) = p.iter().find(|v| !(v.abs() <= 1.0)) {
                bail!(InvalidArgument, "point {i} has entry {v} outside [-1, 1]");
            }
        }
        Ok(Self { points })
    }

    /// Clamps every entry into `[-1, 1]`; non-finite entries become 0.
    pub fn clamped(points: Vec<Point>) -> Result<Self> {
        let points = points
            .into_iter()
            .map(|p| p.map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 }))
            .collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xyz(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| [p[0], p[1], p[2]]).collect()
    }

    /// Per-axis coordinate range `(min, max)`.
    pub fn extent(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    /// Whether some coordinate reaches magnitude 1 (within `tol`).
    pub fn is_tight(&self, tol: f64) -> bool {
        self.points
            .iter()
            .any(|p| p[..3].iter().any(|v| (v.abs() - 1.0).abs() <= tol))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(rename = "class")]
    pub class_label: String,
    pub location: Vec3,
    pub size: f64,
    #[serde(rename = "points")]
    pub cloud: PointCloud,
}

impl SceneObject {
    pub fn new(class_label: impl Into<String>, location: Vec3, size: f64, cloud: PointCloud) -> Result<Self> {
        if !(size > 0.0 && size.is_finite()) {
            return Err(Error::InvalidSize(size));
        }
        if location.iter().any(|v| !v.is_finite()) {
            bail!(InvalidArgument, "object location {location:?} is not finite");
        }
        Ok(Self {
            class_label: class_label.into(),
            location,
            size,
            cloud,
        })
    }

    /// World-space axis-aligned box of the cloud.
    pub fn world_aabb(&self) -> (Vec3, Vec3) {
        let (lo, hi) = self.cloud.extent();
        let h = self.size / 2.0;
        (
            std::array::from_fn(|a| self.location[a] + lo[a] * h),
            std::array::from_fn(|a| self.location[a] + hi[a] * h),
        )
    }

    pub fn world_points(&self) -> Vec<Point> {
        denormalize_into_scene(&self.cloud, self.location, self.size).expect("size validated on construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub objects: Vec<SceneObject>,
    pub bounds_min: Vec3,
    pub bounds_max: Vec3,
}

impl Scene {
    /// Scene whose bounds are the object centres padded by `margin`.
    pub fn new(scene_id: impl Into<String>, objects: Vec<SceneObject>, margin: f64) -> Result<Self> {
        let (lo, hi) = bounds_of_centers(objects.iter().map(|o| &o.location), margin)?;
        Self::with_bounds(scene_id, objects, lo, hi)
    }

    pub fn with_bounds(scene_id: impl Into<String>, objects: Vec<SceneObject>, bounds_min: Vec3, bounds_max: Vec3) -> Result<Self> {
        if objects.is_empty() {
            bail!(EmptyInput, "scene has no objects");
        }
        if (0..3).any(|a| !(bounds_min[a] < bounds_max[a])) {
            bail!(InvalidArgument, "bounds {bounds_min:?}..{bounds_max:?} are not increasing");
        }
        for (i, o) in objects.iter().enumerate() {
            if (0..3).any(|a| o.location[a] < bounds_min[a] || o.location[a] > bounds_max[a]) {
                bail!(Consistency, "object {i} centre {:?} lies outside the scene bounds", o.location);
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            objects,
            bounds_min,
            bounds_max,
        })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn center(&self) -> Vec3 {
        std::array::from_fn(|a| (self.bounds_min[a] + self.bounds_max[a]) / 2.0)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.bounds_min[a] && p[a] <= self.bounds_max[a])
    }

    /// Object locations as rows (the `L` matrix).
    pub fn locations(&self) -> Vec<Vec3> {
        self.objects.iter().map(|o| o.location).collect()
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.objects.iter().map(|o| o.size).collect()
    }

    /// Copy with object `i` removed; bounds are kept.
    pub fn without_object(&self, i: usize) -> Result<Self> {
        if i >= self.objects.len() {
            bail!(Index, "object {i} of {}", self.objects.len());
        }
        let mut objects = self.objects.clone();
        objects.remove(i);
        Self::with_bounds(self.scene_id.clone(), objects, self.bounds_min, self.bounds_max)
    }

    /// Copy with `obj` appended; bounds grow to contain it if needed.
    pub fn with_object(&self, obj: SceneObject) -> Result<Self> {
        let mut lo = self.bounds_min;
        let mut hi = self.bounds_max;
        for a in 0..3 {
            lo[a] = lo[a].min(obj.location[a]);
            hi[a] = hi[a].max(obj.location[a]);
        }
        let mut objects = self.objects.clone();
        objects.push(obj);
        Self::with_bounds(self.scene_id.clone(), objects, lo, hi)
    }
}

fn bounds_of_centers<'a>(centers: impl Iterator<Item = &'a Vec3>, margin: f64) -> Result<(Vec3, Vec3)> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for c in centers {
        any = true;
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    if !any {
        bail!(EmptyInput, "no object centres");
    }
    if !(margin >= 0.0) {
        bail!(InvalidArgument, "bounds margin {margin} must be non-negative");
    }
    Ok((lo.map(|v| v - margin), hi.map(|v| v + margin)))
}

/// Componentwise min/max of the object centres, padded outward by `margin`.
pub fn scene_bounds(scene: &Scene, margin: f64) -> Result<(Vec3, Vec3)> {
    bounds_of_centers(scene.objects.iter().map(|o| &o.location), margin)
}

fn color_to_unit(c: f64) -> f64 {
    c / 127.5 - 1.0
}

fn color_to_byte_range(c: f64) -> f64 {
    (c + 1.0) * 127.5
}

/// Maps world rows to a normalised cloud plus its location and size.
///
/// Location is the centre of the bounding box, size its longest extent, and
/// coordinates are divided by `size / 2`. Colours go from `[0, 255]` to
/// `[-1, 1]`.
pub fn normalize_cloud(raw: &[Point]) -> Result<(PointCloud, Vec3, f64)> {
    if raw.is_empty() {
        bail!(DegenerateInput, "point cloud has no points");
    }
    if raw.iter().flatten().any(|v| !v.is_finite()) {
        bail!(InvalidArgument, "point cloud has non-finite entries");
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in raw {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let size = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(size > 0.0) {
        bail!(DegenerateInput, "point cloud has zero extent on every axis");
    }
    let location: Vec3 = std::array::from_fn(|a| (lo[a] + hi[a]) / 2.0);
    let half = size / 2.0;
    let points = raw
        .iter()
        .map(|p| {
            let mut q = [0.0; CHANNELS];
            for a in 0..3 {
                q[a] = ((p[a] - location[a]) / half).clamp(-1.0, 1.0);
            }
            for c in 3..CHANNELS {
                q[c] = color_to_unit(p[c]).clamp(-1.0, 1.0);
            }
            q
        })
        .collect();
    Ok((PointCloud::new(points)?, location, size))
}

/// Inverse of [`normalize_cloud`]: `world = coords · size/2 + location`.
pub fn denormalize_into_scene(cloud: &PointCloud, location: Vec3, size: f64) -> Result<Vec<Point>> {
    if !(size > 0.0 && size.is_finite()) {
        return Err(Error::InvalidSize(size));
    }
    let half = size / 2.0;
    Ok(cloud
        .points()
        .iter()
        .map(|p| {
            let mut q = [0.0; CHANNELS];
            for a in 0..3 {
                q[a] = p[a] * half + location[a];
            }
            for c in 3..CHANNELS {
                q[c] = color_to_byte_range(p[c]);
            }
            q
        })
        .collect())
}

/// Rotates `(x, y)` by `k · 90°` counter-clockwise about `center`.
pub fn rotate_point_90k(p: Vec3, center: Vec3, k: u8) -> Vec3 {
    let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
    let (rx, ry) = rotate_xy_90k(dx, dy, k);
    [center[0] + rx, center[1] + ry, p[2]]
}

fn rotate_xy_90k(x: f64, y: f64, k: u8) -> (f64, f64) {
    match k % 4 {
        0 => (x, y),
        1 => (-y, x),
        2 => (-x, -y),
        _ => (y, -x),
    }
}

/// Rotates a normalised cloud about its local vertical axis.
pub fn rotate_cloud_90k(cloud: &PointCloud, k: u8) -> PointCloud {
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let (x, y) = rotate_xy_90k(p[0], p[1], k);
            [x, y, p[2], p[3], p[4], p[5]]
        })
        .collect();
    PointCloud { points }
}

/// Rotates every object (location and local cloud) about the vertical axis
/// through the bounds centre by `k · 90°`; the bounds box is rotated too.
pub fn rotate_scene_90k(scene: &Scene, k: u8) -> Scene {
    if k % 4 == 0 {
        return scene.clone();
    }
    let c = scene.center();
    let objects = scene
        .objects
        .iter()
        .map(|o| SceneObject {
            class_label: o.class_label.clone(),
            location: rotate_point_90k(o.location, c, k),
            size: o.size,
            cloud: rotate_cloud_90k(&o.cloud, k),
        })
        .collect();
    let a = rotate_point_90k(scene.bounds_min, c, k);
    let b = rotate_point_90k(scene.bounds_max, c, k);
    Scene {
        scene_id: scene.scene_id.clone(),
        objects,
        bounds_min: std::array::from_fn(|i| a[i].min(b[i])),
        bounds_max: std::array::from_fn(|i| a[i].max(b[i])),
    }
}
