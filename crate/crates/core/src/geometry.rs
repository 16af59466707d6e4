//! Pinhole projection and convex image-region predicates.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use thiserror::Error;

use crate::estimator::Cube;

/// Pixel coordinates, `u` to the right and `v` down. May lie outside the image.
pub type PixelPoint = Point2<f64>;

/// World coordinates in millimeters, right-handed, `+y` up.
pub type WorldPoint = Point3<f64>;

/// Tolerance used for the rotation and intrinsic invariants.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Distance in pixels under which a point counts as lying on a region boundary.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive camera depth {depth}")]
    NonPositiveDepth { depth: f64 },
    #[error("invalid camera {id}: {reason}")]
    InvalidCamera { id: u32, reason: String },
}

/// One calibrated view: intrinsics, world-to-camera pose and image size.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    pub id: u32,
    pub intrinsic: Matrix3<f64>,
    /// World to camera rotation.
    pub rotation: Matrix3<f64>,
    /// World to camera translation, millimeters.
    pub translation: Vector3<f64>,
    /// `(width, height)` in pixels.
    pub resolution: (u32, u32),
}

impl CameraParams {
    pub fn new(
        id: u32,
        intrinsic: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        resolution: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            id,
            intrinsic,
            rotation,
            translation,
            resolution,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Checks the intrinsic, rotation and resolution invariants.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let invalid = |reason: String| GeometryError::InvalidCamera {
            id: self.id,
            reason,
        };
        let k = &self.intrinsic;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(invalid("focal lengths must be positive".into()));
        }
        if k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(invalid("intrinsic bottom row must be (0, 0, 1)".into()));
        }
        let err = orthonormality_error(&self.rotation);
        if err > ROTATION_TOLERANCE {
            return Err(invalid(format!("rotation not orthonormal (error {err:e})")));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(invalid(format!("rotation determinant {det} is not +1")));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(invalid("resolution must be positive".into()));
        }
        if !self.translation.iter().all(|v| v.is_finite()) || !k.iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite parameters".into()));
        }
        Ok(())
    }

    /// Transforms a world point into the camera frame.
    pub fn to_camera(&self, p: &WorldPoint) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    /// World position of the optical center.
    pub fn center(&self) -> WorldPoint {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Back-projects a pixel at the given camera depth into world coordinates.
    pub fn back_project(&self, px: &PixelPoint, depth: f64) -> WorldPoint {
        let k = &self.intrinsic;
        // upper triangular intrinsic, solve by substitution
        let y = (px.y - k[(1, 2)]) / k[(1, 1)];
        let x = (px.x - k[(0, 2)] - k[(0, 1)] * y) / k[(0, 0)];
        let cam = Vector3::new(x, y, 1.0) * depth;
        Point3::from(self.rotation.transpose() * (cam - self.translation))
    }
}

/// Frobenius norm of `R Rᵀ - I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity()).norm()
}

/// Perspective projection `K (R p + t)` divided by its third component.
pub fn project(p: &WorldPoint, cam: &CameraParams) -> Result<PixelPoint, GeometryError> {
    let pc = cam.to_camera(p);
    if pc.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth { depth: pc.z });
    }
    let h = cam.intrinsic * pc;
    Ok(Point2::new(h.x / h.z, h.y / h.z))
}

/// A convex polygon in pixel space, counter-clockwise in `(u, v)` coordinates.
///
/// One and two vertex regions are allowed and represent a point and a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexRegion {
    vertices: Vec<PixelPoint>,
}

impl ConvexRegion {
    /// Builds a region from an already convex, ordered vertex list.
    ///
    /// Returns `None` for an empty list or a list whose turns disagree in sign.
    pub fn from_vertices(vertices: Vec<PixelPoint>) -> Option<Self> {
        if vertices.is_empty() {
            return None;
        }
        let n = vertices.len();
        if n >= 3 {
            let mut sign = 0.0_f64;
            for i in 0..n {
                let c = cross(&vertices[i], &vertices[(i + 1) % n], &vertices[(i + 2) % n]);
                if c != 0.0 {
                    if sign != 0.0 && c.signum() != sign {
                        return None;
                    }
                    sign = c.signum();
                }
            }
            if sign < 0.0 {
                let mut vertices = vertices;
                vertices.reverse();
                return Some(Self { vertices });
            }
        }
        Some(Self { vertices })
    }

    /// Convex hull of an arbitrary point set (Andrew's monotone chain).
    pub fn hull_of(points: &[PixelPoint]) -> Option<Self> {
        let mut pts: Vec<PixelPoint> = points.to_vec();
        if pts.is_empty() {
            return None;
        }
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup();
        if pts.len() < 3 {
            return Some(Self { vertices: pts });
        }
        let mut hull: Vec<PixelPoint> = Vec::with_capacity(pts.len() * 2);
        for p in pts.iter() {
            while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        let lower_len = hull.len() + 1;
        for p in pts.iter().rev().skip(1) {
            while hull.len() >= lower_len
                && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
        Some(Self { vertices: hull })
    }

    pub fn vertices(&self) -> &[PixelPoint] {
        &self.vertices
    }

    /// Signed area, positive for counter-clockwise order.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let a = &self.vertices[i];
            let b = &self.vertices[(i + 1) % n];
            acc += a.x * b.y - b.x * a.y;
        }
        0.5 * acc
    }

    pub fn centroid(&self) -> PixelPoint {
        let n = self.vertices.len() as f64;
        let sum = self
            .vertices
            .iter()
            .fold(nalgebra::Vector2::zeros(), |acc, v| acc + v.coords);
        Point2::from(sum / n)
    }
}

/// z component of `(b - a) x (c - a)`.
#[inline]
fn cross(a: &PixelPoint, b: &PixelPoint, c: &PixelPoint) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Projected footprint of a cube: the convex hull of its eight projected corners.
pub fn cube_projection_region(
    cube: &Cube,
    cam: &CameraParams,
) -> Result<ConvexRegion, GeometryError> {
    let mut projected = [Point2::origin(); 8];
    for (slot, corner) in projected.iter_mut().zip(cube.corners()) {
        *slot = project(&corner, cam)?;
    }
    Ok(ConvexRegion::hull_of(&projected).expect("eight points"))
}

/// Boundary-inclusive containment test.
pub fn region_contains(region: &ConvexRegion, p: &PixelPoint) -> bool {
    let v = &region.vertices;
    match v.len() {
        0 => false,
        1 => (p - v[0]).norm() <= BOUNDARY_EPS,
        2 => {
            let d = v[1] - v[0];
            let len = d.norm();
            let w = p - v[0];
            if len == 0.0 {
                return w.norm() <= BOUNDARY_EPS;
            }
            let off_line = (d.x * w.y - d.y * w.x).abs() / len;
            let along = d.dot(&w) / len;
            off_line <= BOUNDARY_EPS && along >= -BOUNDARY_EPS && along <= len + BOUNDARY_EPS
        }
        n => (0..n).all(|i| {
            let a = &v[i];
            let b = &v[(i + 1) % n];
            let len = (b - a).norm();
            cross(a, b, p) >= -BOUNDARY_EPS * len
        }),
    }
}

/// Euclidean distance from `p` to the region, zero on or inside it.
pub fn region_distance(region: &ConvexRegion, p: &PixelPoint) -> f64 {
    let v = &region.vertices;
    match v.len() {
        0 => f64::INFINITY,
        1 => (p - v[0]).norm(),
        _ if v.len() > 2 && region_contains(region, p) => 0.0,
        n => {
            let edges = if n == 2 { 1 } else { n };
            (0..edges)
                .map(|i| segment_distance(&v[i], &v[(i + 1) % n], p))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

fn segment_distance(a: &PixelPoint, b: &PixelPoint, p: &PixelPoint) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
    (p - (a + d * t)).norm()
}
