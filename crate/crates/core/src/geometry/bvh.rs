use super::Point3;

/// Bounding volume hierarchy over a triangle soup, used for ray casts and
/// closest-point queries.
#[derive(Clone, Debug)]
pub struct Bvh {
    tris: Vec<[Point3; 3]>,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Point3,
    hi: Point3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Point3::repeat(f64::INFINITY),
            hi: Point3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn distance_sq(&self, p: &Point3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    fn hit_by(&self, origin: &Point3, inv_dir: &Point3, t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.lo[k] - origin[k]) * inv_dir[k];
            let b = (self.hi[k] - origin[k]) * inv_dir[k];
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            // NaN from 0 * inf keeps the slab unconstrained
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: `start..start+count` into `order`; inner: children at `left`, `left+1`.
    start: usize,
    count: usize,
    left: usize,
}

/// A ray-triangle intersection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub face: usize,
    pub point: Point3,
    /// Barycentric coordinates of `point` in the face.
    pub bary: [f64; 3],
}

/// Result of a closest-point query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestHit {
    pub face: usize,
    pub point: Point3,
    pub bary: [f64; 3],
    pub distance: f64,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn new(positions: &[Point3], faces: &[[usize; 3]]) -> Self {
        let tris: Vec<[Point3; 3]> = faces
            .iter()
            .map(|f| [positions[f[0]], positions[f[1]], positions[f[2]]])
            .collect();
        let mut bvh = Self {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
        };
        if !bvh.tris.is_empty() {
            let centroids: Vec<Point3> = bvh.tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
            bvh.nodes.push(Node {
                bounds: Aabb::empty(),
                start: 0,
                count: bvh.tris.len(),
                left: 0,
            });
            bvh.split(0, &centroids);
        }
        bvh
    }

    fn split(&mut self, node: usize, centroids: &[Point3]) {
        let Node { start, count, .. } = self.nodes[node];
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &i in &self.order[start..start + count] {
            for p in &self.tris[i] {
                bounds.grow(p);
            }
            cbounds.grow(&centroids[i]);
        }
        self.nodes[node].bounds = bounds;
        if count <= LEAF_SIZE {
            return;
        }
        let extent = cbounds.hi - cbounds.lo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        if extent[axis] <= 0.0 {
            return;
        }
        let mid = count / 2;
        self.order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        let left = self.nodes.len();
        self.nodes.push(Node {
            bounds: Aabb::empty(),
            start,
            count: mid,
            left: 0,
        });
        self.nodes.push(Node {
            bounds: Aabb::empty(),
            start: start + mid,
            count: count - mid,
            left: 0,
        });
        self.nodes[node].left = left;
        self.nodes[node].count = 0;
        self.split(left, centroids);
        self.split(left + 1, centroids);
    }

    /// All intersections of the ray `origin + t·dir`, `t ≥ 0`, sorted by `t`.
    pub fn ray_hits(&self, origin: &Point3, dir: &Point3) -> Vec<RayHit> {
        let mut hits = Vec::new();
        if self.nodes.is_empty() {
            return hits;
        }
        let inv = Point3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = self.nodes[n];
            if !node.bounds.hit_by(origin, &inv, f64::INFINITY) {
                continue;
            }
            if node.count > 0 {
                for &i in &self.order[node.start..node.start + node.count] {
                    if let Some((t, bary)) = ray_triangle(origin, dir, &self.tris[i]) {
                        hits.push(RayHit {
                            t,
                            face: i,
                            point: origin + dir * t,
                            bary,
                        });
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.left + 1);
            }
        }
        hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.face.cmp(&b.face)));
        hits
    }

    /// Nearest surface point to `p`.
    pub fn closest_point(&self, p: &Point3) -> Option<ClosestHit> {
        let mut best: Option<ClosestHit> = None;
        let mut best_d2 = f64::INFINITY;
        if self.nodes.is_empty() {
            return None;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = self.nodes[n];
            if node.bounds.distance_sq(p) > best_d2 {
                continue;
            }
            if node.count > 0 {
                for &i in &self.order[node.start..node.start + node.count] {
                    let (q, bary) = closest_on_triangle(p, &self.tris[i]);
                    let d2 = (q - p).norm_squared();
                    let better = d2 < best_d2 || (d2 == best_d2 && best.is_some_and(|b| i < b.face));
                    if better {
                        best_d2 = d2;
                        best = Some(ClosestHit {
                            face: i,
                            point: q,
                            bary,
                            distance: d2.sqrt(),
                        });
                    }
                }
            } else {
                let (a, b) = (node.left, node.left + 1);
                let da = self.nodes[a].bounds.distance_sq(p);
                let db = self.nodes[b].bounds.distance_sq(p);
                if da < db {
                    stack.push(b);
                    stack.push(a);
                } else {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        best
    }

    /// Inside test by ray parity along a fixed skewed direction.
    pub fn contains(&self, p: &Point3) -> bool {
        let dir = Point3::new(0.5773, 0.5774, 0.5773503).normalize();
        let hits = self.ray_hits(p, &dir);
        let mut count = 0;
        let mut last = f64::NEG_INFINITY;
        for h in hits {
            if h.t - last > 1e-12 {
                count += 1;
            }
            last = h.t;
        }
        count % 2 == 1
    }
}

/// Möller–Trumbore intersection; returns `(t, barycentric)`.
pub(crate) fn ray_triangle(origin: &Point3, dir: &Point3, tri: &[Point3; 3]) -> Option<(f64, [f64; 3])> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    let scale = e1.norm() * e2.norm() * dir.norm();
    if det.abs() <= 1e-14 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(&pvec) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&qvec) * inv;
    if t < 0.0 {
        return None;
    }
    Some((t, [1.0 - u - v, u, v]))
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection 5.1.5).
pub(crate) fn closest_on_triangle(p: &Point3, tri: &[Point3; 3]) -> (Point3, [f64; 3]) {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::tests::icosahedron;

    #[test]
    fn ray_through_icosahedron_hits_twice() {
        let m = icosahedron();
        let bvh = Bvh::new(m.positions(), m.faces());
        let hits = bvh.ray_hits(&Point3::new(0.01, 0.02, -10.0), &Point3::z());
        assert_eq!(hits.len(), 2);
        assert!(hits[0].point.z < 0.0 && hits[1].point.z > 0.0);
        assert!(bvh.contains(&Point3::new(0.1, 0.2, 0.3)));
        assert!(!bvh.contains(&Point3::new(5.0, 0.2, 0.3)));
    }

    #[test]
    fn closest_point_matches_brute_force() {
        let m = icosahedron();
        let bvh = Bvh::new(m.positions(), m.faces());
        for k in 0..50 {
            let t = k as f64 * 0.7;
            let p = Point3::new(3.0 * t.sin(), 2.0 * (1.3 * t).cos(), (0.5 * t).sin() * 2.5);
            let hit = bvh.closest_point(&p).unwrap();
            let brute = m
                .faces()
                .iter()
                .map(|f| {
                    let tri = [m.positions()[f[0]], m.positions()[f[1]], m.positions()[f[2]]];
                    (closest_on_triangle(&p, &tri).0 - p).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((hit.distance - brute).abs() < 1e-12);
        }
    }
}
