//! Depth placement of parts relative to parts already placed.

use crate::error::{Error, Result};
use crate::geometry::polygon::overlap;
use crate::geometry::{Bvh, Plane, Point2, Point3, TriangleMesh};

/// Grid resolution for outline overlap estimates.
const OVERLAP_RESOLUTION: usize = 96;

/// A part whose depth is fixed.
#[derive(Clone, Debug)]
pub struct PlacedPart {
    pub name: String,
    /// Outline in drawing coordinates.
    pub outline: Vec<Point2>,
    pub mesh: TriangleMesh,
    pub plane: Plane,
    pub bvh: Bvh,
}

impl PlacedPart {
    pub fn new(name: impl Into<String>, outline: Vec<Point2>, mesh: TriangleMesh, plane: Plane) -> Self {
        let bvh = Bvh::new(mesh.positions(), mesh.faces());
        Self {
            name: name.into(),
            outline,
            mesh,
            plane,
            bvh,
        }
    }

    /// Copy moved by `dz` along the view axis.
    pub fn shifted(&self, dz: f64) -> Self {
        let mut mesh = self.mesh.clone();
        for p in mesh.positions_mut() {
            p.z += dz;
        }
        Self::new(self.name.clone(), self.outline.clone(), mesh, shift_plane(&self.plane, dz))
    }
}

/// Plane moved by `dz` along z.
pub fn shift_plane(plane: &Plane, dz: f64) -> Plane {
    Plane {
        normal: plane.normal,
        offset: plane.offset - plane.normal.z * dz,
    }
}

/// Depth of a part at drawing point `c`: its plane's depth there, or the
/// middle of its depth range when the plane contains the view axis.
pub fn depth_anchor(mesh: &TriangleMesh, plane: &Plane, c: &Point2) -> f64 {
    if plane.normal.z.abs() > 1e-6 {
        if let Some(d) = plane.depth_at(c) {
            return d;
        }
    }
    let (lo, hi) = mesh
        .positions()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    0.5 * (lo + hi)
}

/// Whether two closed meshes share volume: some edge of one crosses the
/// other's surface, or one contains a vertex of the other.
pub fn meshes_intersect(a: &TriangleMesh, abvh: &Bvh, b: &TriangleMesh, bbvh: &Bvh) -> bool {
    let crosses = |m: &TriangleMesh, other: &Bvh| {
        let p = m.positions();
        m.edges().iter().any(|e| {
            let d = p[e[1]] - p[e[0]];
            let len = d.norm();
            len > 0.0
                && other
                    .ray_hits(&p[e[0]], &(d / len))
                    .first()
                    .is_some_and(|h| h.t <= len)
        })
    };
    crosses(a, bbvh)
        || crosses(b, abvh)
        || a.positions().first().is_some_and(|p| bbvh.contains(p))
        || b.positions().first().is_some_and(|p| abvh.contains(p))
}

/// Outcome of placing one part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    /// Part whose outline overlaps most.
    pub parent: usize,
    /// Translation along z.
    pub dz: f64,
    pub plane: Plane,
    /// Whether the parent's plane was reused directly.
    pub reused: bool,
}

/// Index and overlap centroid of the part overlapping `outline` most;
/// ties go to the lower index.
pub fn best_overlap(outline: &[Point2], existing: &[PlacedPart]) -> Option<(usize, Point2)> {
    let mut best: Option<(usize, f64, Point2)> = None;
    for (j, part) in existing.iter().enumerate() {
        if let Some((area, c)) = overlap(outline, &part.outline, OVERLAP_RESOLUTION) {
            if best.is_none_or(|b| area > b.1) {
                best = Some((j, area, c));
            }
        }
    }
    best.map(|(j, _, c)| (j, c))
}

/// Places a solo part against the part its outline overlaps most: reuse
/// that part's plane when the two then intersect, else put the plane
/// halfway between the first two surface hits of a +z ray through the
/// overlap centroid.
pub fn central_position(part: &PlacedPart, existing: &[PlacedPart]) -> Result<Placement> {
    let (j, c) = best_overlap(&part.outline, existing).ok_or_else(|| Error::Disconnected(part.name.clone()))?;
    let parent = &existing[j];
    let own = depth_anchor(&part.mesh, &part.plane, &c);
    let reuse = depth_anchor(&parent.mesh, &parent.plane, &c) - own;
    let moved = part.shifted(reuse);
    if meshes_intersect(&moved.mesh, &moved.bvh, &parent.mesh, &parent.bvh) {
        return Ok(Placement {
            parent: j,
            dz: reuse,
            plane: moved.plane,
            reused: true,
        });
    }
    let (lo, hi) = z_range(&parent.mesh);
    let origin = Point3::new(c.x, c.y, lo - 1.0 - (hi - lo));
    let hits = distinct_hits(&parent.bvh, &origin, &Point3::z());
    if hits.len() < 2 {
        return Err(Error::RayMiss(parent.name.clone()));
    }
    let d = 0.5 * (hits[0].z + hits[1].z);
    let dz = d - own;
    Ok(Placement {
        parent: j,
        dz,
        plane: shift_plane(&part.plane, dz),
        reused: false,
    })
}

/// Ray hit points with repeats at shared edges and vertices removed.
fn distinct_hits(bvh: &Bvh, origin: &Point3, dir: &Point3) -> Vec<Point3> {
    let mut out: Vec<(f64, Point3)> = Vec::new();
    for h in bvh.ray_hits(origin, dir) {
        if out.last().is_none_or(|(t, _)| h.t - t > 1e-9) {
            out.push((h.t, h.point));
        }
    }
    out.into_iter().map(|(_, p)| p).collect()
}

fn z_range(mesh: &TriangleMesh) -> (f64, f64) {
    mesh.positions()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)))
}

/// Places an intrinsic pair against its parent. The near part's plane
/// passes through the parent's first surface hit seen from the viewer; the
/// far part's through the first hit on the other side of the parent's
/// plane. Both parts are expected to share the parent's plane normal.
pub fn biased_position(near: &PlacedPart, far: &PlacedPart, parent: &PlacedPart) -> Result<(f64, f64)> {
    let (lo, hi) = z_range(&parent.mesh);
    let top = hi + 1.0 + (hi - lo);
    let cast = |outline: &[Point2]| -> Result<Vec<Point3>> {
        let (_, c) = overlap(outline, &parent.outline, OVERLAP_RESOLUTION)
            .ok_or_else(|| Error::Disconnected(format!("{} does not overlap {}", near.name, parent.name)))?;
        let hits = distinct_hits(&parent.bvh, &Point3::new(c.x, c.y, top), &-Point3::z());
        if hits.is_empty() {
            return Err(Error::RayMiss(parent.name.clone()));
        }
        Ok(hits)
    };
    let hits_i = cast(&near.outline)?;
    let p_i = hits_i[0];
    let side = parent.plane.signed_distance(&p_i);
    let hits_j = cast(&far.outline)?;
    let p_j = hits_j
        .iter()
        .find(|p| parent.plane.signed_distance(p) * side < 0.0)
        .copied()
        .ok_or_else(|| Error::ParentTooThin(parent.name.clone()))?;
    let anchor = |part: &PlacedPart, p: &Point3| p.z - depth_anchor(&part.mesh, &part.plane, &p.xy());
    Ok((anchor(near, &p_i), anchor(far, &p_j)))
}
