//! Points, planes, triangle meshes and the discrete operators shared by the
//! rest of the crate.
//!
//! The drawing plane is `z = 0` and the viewer looks down `-z`. Drawing
//! coordinates are normalized so the drawing's bounding square is `[0,1]²`
//! with `y` pointing up.

mod bvh;
pub(crate) mod mesh;
pub mod polygon;
mod symmetric;

pub use bvh::{Bvh, ClosestHit, RayHit};
pub use mesh::{graph_laplacian, laplacian_on_graph, vertex_area_normal, TriangleMesh};
pub use symmetric::{ConstraintKind, Half, ProjectionConstraint, SymmetricPartMesh};

use nalgebra::{Unit, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub type Point2 = Vector2<f64>;
pub type Point3 = Vector3<f64>;

/// Plane `n·x + d = 0` with unit normal `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Point3,
    pub offset: f64,
}

impl Plane {
    /// The drawing plane `z = 0`.
    pub fn drawing() -> Self {
        Self {
            normal: Point3::z(),
            offset: 0.0,
        }
    }

    /// Plane through `point` with the given normal; the normal is normalized.
    pub fn through(point: &Point3, normal: &Point3) -> Self {
        let n = normal.normalize();
        Self {
            normal: n,
            offset: -n.dot(point),
        }
    }

    /// Builds a plane from `(a, b, c, d)`, normalizing the coefficients.
    pub fn from_coefficients(a: f64, b: f64, c: f64, d: f64) -> Self {
        let len = (a * a + b * b + c * c).sqrt();
        Self {
            normal: Point3::new(a, b, c) / len,
            offset: d / len,
        }
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// Some point lying on the plane.
    pub fn origin(&self) -> Point3 {
        -self.offset * self.normal
    }

    /// Depth of the plane above the drawing-plane point `(x, y)`, or `None`
    /// when the plane contains the view direction.
    pub fn depth_at(&self, xy: &Point2) -> Option<f64> {
        let n = &self.normal;
        if n.z.abs() < 1e-12 {
            return None;
        }
        Some(-(n.x * xy.x + n.y * xy.y + self.offset) / n.z)
    }

    pub fn reflect(&self, p: &Point3) -> Point3 {
        reflect_about_plane(p, self)
    }

    /// Applies a rotation about the line through `pivot` with direction `axis`.
    pub fn rotated(&self, axis: &Point3, angle: f64, pivot: &Point3) -> Self {
        let rot = UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle);
        let n = rot * self.normal;
        let on_plane = rotate_about(&self.origin(), axis, angle, pivot);
        Plane::through(&on_plane, &n)
    }

    /// An orthonormal basis `(e1, e2)` spanning the plane directions.
    pub fn basis(&self) -> (Point3, Point3) {
        let n = self.normal;
        let helper = if n.x.abs() < 0.9 { Point3::x() } else { Point3::y() };
        let e1 = n.cross(&helper).normalize();
        let e2 = n.cross(&e1);
        (e1, e2)
    }
}

/// Mirror image of `p` across `plane`.
pub fn reflect_about_plane(p: &Point3, plane: &Plane) -> Point3 {
    p - 2.0 * (plane.normal.dot(p) + plane.offset) * plane.normal
}

/// Orthographic projection onto the drawing plane.
pub fn project(p: &Point3) -> Point2 {
    Point2::new(p.x, p.y)
}

/// Rotates `p` by `angle` (right-hand rule) about the line through `pivot`
/// with direction `axis`.
pub fn rotate_about(p: &Point3, axis: &Point3, angle: f64, pivot: &Point3) -> Point3 {
    let rot = UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle);
    pivot + rot * (p - pivot)
}

/// Angle in radians between two (not necessarily unit) normals.
pub fn angle_between_normals(a: &Point3, b: &Point3) -> f64 {
    // atan2 form stays accurate for nearly parallel vectors
    let cross = a.cross(b).norm();
    let dot = a.dot(b);
    cross.atan2(dot)
}

/// Axis-aligned bounding box diagonal of a point set.
pub fn bbox_diagonal(points: &[Point3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}
