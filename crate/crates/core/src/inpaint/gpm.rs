//! Geodesic polar maps by local Dijkstra unfolding.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::{Point2, Point3, TriangleMesh};

/// Local polar chart around a vertex. Coordinates are Cartesian in the
/// center's tangent frame; [`GeodesicPolarMap::polar`] gives (angle,
/// radius).
#[derive(Clone, Debug)]
pub struct GeodesicPolarMap {
    pub center: usize,
    pub radius: f64,
    pub verts: Vec<usize>,
    pub coords: Vec<Point2>,
    /// Covered mesh faces and their corner coordinates.
    pub faces: Vec<usize>,
    pub face_coords: Vec<[Point2; 3]>,
    grid: LocateGrid,
}

#[derive(Clone, Debug, Default)]
struct LocateGrid {
    origin: Point2,
    cell: f64,
    dim: usize,
    start: Vec<u32>,
    items: Vec<u32>,
}

impl LocateGrid {
    fn build(tris: &[[Point2; 3]], extent: f64, dim: usize) -> Self {
        let origin = Point2::new(-extent, -extent);
        let cell = 2.0 * extent / dim as f64;
        let range = |t: &[Point2; 3]| {
            let clamp = |x: f64| ((x / cell).floor().max(0.0) as usize).min(dim - 1);
            let lo = t[0].inf(&t[1]).inf(&t[2]) - origin;
            let hi = t[0].sup(&t[1]).sup(&t[2]) - origin;
            (clamp(lo.x), clamp(hi.x), clamp(lo.y), clamp(hi.y))
        };
        let mut count = vec![0u32; dim * dim + 1];
        for t in tris {
            let (x0, x1, y0, y1) = range(t);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    count[y * dim + x + 1] += 1;
                }
            }
        }
        for i in 1..count.len() {
            count[i] += count[i - 1];
        }
        let mut fill = count.clone();
        let mut items = vec![0u32; *count.last().unwrap() as usize];
        for (i, t) in tris.iter().enumerate() {
            let (x0, x1, y0, y1) = range(t);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let c = y * dim + x;
                    items[fill[c] as usize] = i as u32;
                    fill[c] += 1;
                }
            }
        }
        Self {
            origin,
            cell,
            dim,
            start: count,
            items,
        }
    }

    fn candidates(&self, p: &Point2) -> &[u32] {
        let q = (p - self.origin) / self.cell;
        if q.x < 0.0 || q.y < 0.0 || q.x >= self.dim as f64 || q.y >= self.dim as f64 {
            return &[];
        }
        let c = q.y as usize * self.dim + q.x as usize;
        &self.items[self.start[c] as usize..self.start[c + 1] as usize]
    }
}

/// Barycentric coordinates of `p`; `None` for degenerate or negatively
/// oriented triangles.
pub(crate) fn barycentric_ccw(p: &Point2, t: &[Point2; 3]) -> Option<[f64; 3]> {
    let d = (t[1] - t[0]).perp(&(t[2] - t[0]));
    if d <= 1e-300 {
        return None;
    }
    let l0 = (t[1] - p).perp(&(t[2] - p)) / d;
    let l1 = (t[2] - p).perp(&(t[0] - p)) / d;
    Some([l0, l1, 1.0 - l0 - l1])
}

impl GeodesicPolarMap {
    /// (angle in `[0, 2π)`, radius) of covered vertex `i`.
    pub fn polar(&self, i: usize) -> (f64, f64) {
        let c = self.coords[i];
        (c.y.atan2(c.x).rem_euclid(std::f64::consts::TAU), c.norm())
    }

    /// Covered face containing `p` as (index into `faces`, barycentric).
    pub fn locate(&self, p: &Point2) -> Option<(usize, [f64; 3])> {
        if p.norm() > self.radius * (1.0 + 1e-9) {
            return None;
        }
        for &i in self.grid.candidates(p) {
            let i = i as usize;
            if let Some(b) = barycentric_ccw(p, &self.face_coords[i]) {
                if b.iter().all(|&l| l >= -1e-9) {
                    return Some((i, b));
                }
            }
        }
        None
    }

    /// Whether every covered face is in `allowed`.
    pub fn within(&self, allowed: &[bool]) -> bool {
        self.faces.iter().all(|&f| allowed[f])
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Builds polar maps on one mesh, reusing scratch buffers.
pub struct GpmBuilder<'a> {
    mesh: &'a TriangleMesh,
    normals: Vec<Point3>,
    max_edge: f64,
    stamp: Vec<u32>,
    epoch: u32,
    dist: Vec<f64>,
    coord: Vec<Point2>,
    frame: Vec<(Point3, Point3)>,
    done: Vec<bool>,
    face_stamp: Vec<u32>,
}

fn any_perpendicular(n: &Point3) -> Point3 {
    let a = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Point3::x()
    } else if n.y.abs() <= n.z.abs() {
        Point3::y()
    } else {
        Point3::z()
    };
    (a - n * n.dot(&a)).normalize()
}

/// Rotates `v` by the smallest rotation taking unit `from` to unit `to`.
fn transport(v: &Point3, from: &Point3, to: &Point3) -> Point3 {
    let axis = from.cross(to);
    let c = from.dot(to);
    if c < -1.0 + 1e-12 {
        return -v;
    }
    // Rodrigues with sin folded into the unnormalized axis
    v * c + axis.cross(v) + axis * (axis.dot(v) / (1.0 + c))
}

impl<'a> GpmBuilder<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Self {
        let n = mesh.vertex_count();
        let mut normals = vec![Point3::zeros(); n];
        for (f, t) in mesh.faces().iter().enumerate() {
            let c = mesh.face_cross(f);
            for &v in t {
                normals[v] += c;
            }
        }
        for nr in &mut normals {
            *nr = nr.try_normalize(1e-300).unwrap_or_else(Point3::z);
        }
        let p = mesh.positions();
        let max_edge = mesh.edges().iter().map(|e| (p[e[0]] - p[e[1]]).norm()).fold(0.0, f64::max);
        Self {
            mesh,
            normals,
            max_edge,
            stamp: vec![0; n],
            epoch: 0,
            dist: vec![0.0; n],
            coord: vec![Point2::zeros(); n],
            frame: vec![(Point3::zeros(), Point3::zeros()); n],
            done: vec![false; n],
            face_stamp: vec![0; mesh.face_count()],
        }
    }

    pub fn normals(&self) -> &[Point3] {
        &self.normals
    }

    /// Polar map of radius `radius` around `center`. When the unfolding
    /// folds over itself inside the radius, the radius shrinks by a
    /// quarter up to three times; the second value reports a shrink.
    pub fn build(&mut self, center: usize, radius: f64) -> (GeodesicPolarMap, bool) {
        let mut r = radius;
        for attempt in 0..4 {
            let g = self.unfold(center, r);
            let folded = g
                .face_coords
                .iter()
                .any(|t| (t[1] - t[0]).perp(&(t[2] - t[0])) <= 0.0 && t.iter().all(|c| c.norm() < r));
            if !folded || attempt == 3 {
                return (g, attempt > 0);
            }
            r *= 0.75;
        }
        unreachable!()
    }

    fn unfold(&mut self, center: usize, radius: f64) -> GeodesicPolarMap {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.fill(0);
            self.face_stamp.fill(0);
            self.epoch = 1;
        }
        let ep = self.epoch;
        let p = self.mesh.positions();
        let limit = 1.5 * radius + self.max_edge;
        let n0 = self.normals[center];
        let e1 = any_perpendicular(&n0);
        self.stamp[center] = ep;
        self.dist[center] = 0.0;
        self.coord[center] = Point2::zeros();
        self.frame[center] = (e1, n0.cross(&e1));
        self.done[center] = false;
        let mut heap = BinaryHeap::from([Entry(0.0, center)]);
        let mut verts = Vec::new();
        while let Some(Entry(d, v)) = heap.pop() {
            if self.done[v] || d > self.dist[v] {
                continue;
            }
            self.done[v] = true;
            verts.push(v);
            let (a1, a2) = self.frame[v];
            for &u in self.mesh.neighbors(v) {
                let e = p[u] - p[v];
                let len = e.norm();
                let nd = d + len;
                if nd > limit {
                    continue;
                }
                let fresh = self.stamp[u] != ep;
                if fresh || (!self.done[u] && nd < self.dist[u]) {
                    if fresh {
                        self.stamp[u] = ep;
                        self.done[u] = false;
                    }
                    self.dist[u] = nd;
                    let local = Point2::new(e.dot(&a1), e.dot(&a2));
                    let step = local.try_normalize(1e-300).map_or(Point2::zeros(), |s| s * len);
                    self.coord[u] = self.coord[v] + step;
                    let nu = self.normals[u];
                    let t1 = transport(&a1, &self.normals[v], &nu);
                    let t1 = (t1 - nu * nu.dot(&t1)).normalize();
                    self.frame[u] = (t1, nu.cross(&t1));
                    heap.push(Entry(nd, u));
                }
            }
        }
        let coords: Vec<Point2> = verts.iter().map(|&v| self.coord[v]).collect();
        let mut faces = Vec::new();
        let mut face_coords = Vec::new();
        for &v in &verts {
            for &f in self.mesh.vertex_faces(v) {
                if self.face_stamp[f] == ep {
                    continue;
                }
                self.face_stamp[f] = ep;
                let t = self.mesh.faces()[f];
                if t.iter().all(|&u| self.stamp[u] == ep && self.done[u]) {
                    faces.push(f);
                    face_coords.push(t.map(|u| self.coord[u]));
                }
            }
        }
        for &v in &verts {
            self.done[v] = false;
        }
        let extent = coords.iter().map(|c| c.amax()).fold(radius, f64::max) * 1.001;
        let dim = ((faces.len() as f64).sqrt().ceil() as usize).clamp(1, 64);
        let grid = LocateGrid::build(&face_coords, extent, dim);
        GeodesicPolarMap {
            center,
            radius,
            verts,
            coords,
            faces,
            face_coords,
            grid,
        }
    }
}
