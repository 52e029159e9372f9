//! Boolean union of posed parts with junction smoothing and UV stitching.

use std::collections::{BTreeMap, VecDeque};

use boolmesh::prelude::{compute_boolean, Manifold, OpType};
use serde::{Deserialize, Serialize};

use super::position::meshes_intersect;
use crate::error::{Error, Result};
use crate::geometry::{bbox_diagonal, Bvh, Point2, Point3, TriangleMesh};
use crate::texturer::{harmonic_extension, TexturedMesh};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// Collar half-width in mean edge lengths.
    pub collar_width: f64,
    pub smoothing_iterations: usize,
    /// Translation tried once when a union fails.
    pub jitter: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            collar_width: 2.0,
            smoothing_iterations: 3,
            jitter: 1e-6,
        }
    }
}

/// A textured part ready for merging.
#[derive(Clone, Debug)]
pub struct MergePart {
    pub name: String,
    pub mesh: TexturedMesh,
}

#[derive(Clone, Debug)]
pub struct MergeOutput {
    pub mesh: TexturedMesh,
    /// Index of the part each face comes from.
    pub origin: Vec<usize>,
    /// Faces in a junction collar.
    pub collar: Vec<bool>,
    pub warnings: Vec<String>,
}

/// Parts in breadth-first order from `root` over the undirected
/// connection graph.
pub fn union_order(count: usize, connections: &[(usize, usize)], root: usize) -> Result<Vec<usize>> {
    let mut adj = vec![Vec::new(); count];
    for &(a, b) in connections {
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let mut seen = vec![false; count];
    let mut order = Vec::with_capacity(count);
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(p) = queue.pop_front() {
        order.push(p);
        for &q in &adj[p] {
            if !seen[q] {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    if let Some(p) = seen.iter().position(|s| !s) {
        return Err(Error::Disconnected(format!("part {p} is not connected to the root")));
    }
    Ok(order)
}

fn to_manifold(mesh: &TriangleMesh, offset: &Point3) -> std::result::Result<Manifold, String> {
    let pos: Vec<f64> = mesh.positions().iter().flat_map(|p| [p.x + offset.x, p.y + offset.y, p.z + offset.z]).collect();
    let idx: Vec<usize> = mesh.faces().iter().flatten().copied().collect();
    Manifold::new(&pos, &idx)
}

fn from_manifold(m: &Manifold) -> Result<TriangleMesh> {
    let pos = m.ps.iter().map(|p| Point3::new(p.x, p.y, p.z)).collect();
    let faces = m.hs.chunks(3).map(|h| [h[0].tail, h[1].tail, h[2].tail]).collect();
    TriangleMesh::new(pos, faces)
}

/// Union of all part meshes in breadth-first order, jittering a part once
/// when its union fails.
fn union_all(parts: &[MergePart], order: &[usize], jitter: f64) -> Result<TriangleMesh> {
    let first = &parts[order[0]].mesh.mesh;
    let mut acc = to_manifold(first, &Point3::zeros()).map_err(Error::Boolean)?;
    for &p in &order[1..] {
        let mesh = &parts[p].mesh.mesh;
        let attempt = |offset: Point3| {
            let m = to_manifold(mesh, &offset)?;
            compute_boolean(&acc, &m, OpType::Add)
        };
        acc = match attempt(Point3::zeros()) {
            Ok(m) => m,
            Err(_) => attempt(Point3::repeat(jitter))
                .map_err(|e| Error::Boolean(format!("union with {} failed: {e}", parts[p].name)))?,
        };
    }
    from_manifold(&acc)
}

/// Barycentric coordinates of `p` projected into triangle `t`.
fn barycentric(p: &Point3, t: &[Point3; 3]) -> [f64; 3] {
    for k in 0..3 {
        if *p == t[k] {
            let mut b = [0.0; 3];
            b[k] = 1.0;
            return b;
        }
    }
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let d = p - t[0];
    let (a11, a12, a22) = (e1.dot(&e1), e1.dot(&e2), e2.dot(&e2));
    let (b1, b2) = (d.dot(&e1), d.dot(&e2));
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-300 {
        return [1.0, 0.0, 0.0];
    }
    let u = (a22 * b1 - a12 * b2) / det;
    let v = (a11 * b2 - a12 * b1) / det;
    [1.0 - u - v, u, v]
}

/// Merges posed parts into one closed mesh. `connections` lists declared
/// (child, parent) joints; every one must intersect in 3D.
pub fn merge_parts(
    parts: &[MergePart],
    connections: &[(usize, usize)],
    root: usize,
    cfg: &MergeConfig,
) -> Result<MergeOutput> {
    if parts.is_empty() {
        return Err(Error::NothingToExport);
    }
    if parts.len() == 1 {
        let mesh = parts[0].mesh.clone();
        let n = mesh.face_count();
        return Ok(MergeOutput {
            mesh,
            origin: vec![0; n],
            collar: vec![false; n],
            warnings: Vec::new(),
        });
    }
    let bvhs: Vec<Bvh> = parts.iter().map(|p| Bvh::new(p.mesh.mesh.positions(), p.mesh.mesh.faces())).collect();
    for &(c, p) in connections {
        if !meshes_intersect(&parts[c].mesh.mesh, &bvhs[c], &parts[p].mesh.mesh, &bvhs[p]) {
            return Err(Error::NotIntersecting(parts[c].name.clone(), parts[p].name.clone()));
        }
    }
    let order = union_order(parts.len(), connections, root)?;
    let mut mesh = union_all(parts, &order, cfg.jitter)?;
    let mut warnings = Vec::new();

    // each output face lies inside one input face
    let nf = mesh.face_count();
    let mut origin = vec![0; nf];
    let mut source_face = vec![0; nf];
    for f in 0..nf {
        let c = mesh.face_centroid(f);
        let mut best = (f64::INFINITY, 0, 0);
        for (p, bvh) in bvhs.iter().enumerate() {
            if let Some(h) = bvh.closest_point(&c) {
                if h.distance < best.0 {
                    best = (h.distance, p, h.face);
                }
            }
        }
        origin[f] = best.1;
        source_face[f] = best.2;
    }
    let pos = mesh.positions().to_vec();
    let faces = mesh.faces().to_vec();
    let mut uv: Vec<[Point2; 3]> = (0..nf)
        .map(|f| {
            let src = &parts[origin[f]].mesh;
            let g = source_face[f];
            let sf = src.mesh.faces()[g];
            let tri = [0, 1, 2].map(|k| src.mesh.positions()[sf[k]]);
            [0, 1, 2].map(|k| {
                let b = barycentric(&pos[faces[f][k]], &tri);
                src.uv[g][0] * b[0] + src.uv[g][1] * b[1] + src.uv[g][2] * b[2]
            })
        })
        .collect();
    let flags = (0..nf).map(|f| parts[origin[f]].mesh.flags[source_face[f]]).collect();
    let page = (0..nf).map(|f| parts[origin[f]].mesh.page[source_face[f]]).collect();
    let mut first_child: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for f in 0..nf {
        first_child.entry((origin[f], source_face[f])).or_insert(f);
    }
    let mirror_of = (0..nf)
        .map(|f| {
            let m = parts[origin[f]].mesh.mirror_of[source_face[f]]?;
            first_child.get(&(origin[f], m)).copied()
        })
        .collect();

    // intersection curve: vertices on the surfaces of two parts
    let tol = 1e-7 * bbox_diagonal(&pos);
    let on_curve: Vec<bool> = pos
        .iter()
        .map(|p| {
            bvhs.iter()
                .filter(|b| b.closest_point(p).is_some_and(|h| h.distance <= tol))
                .count()
                >= 2
        })
        .collect();
    let curve: Vec<Point3> = pos.iter().zip(&on_curve).filter(|(_, c)| **c).map(|(p, _)| *p).collect();
    let radius = cfg.collar_width * mesh.mean_edge_length();
    let near: Vec<bool> = pos
        .iter()
        .map(|p| curve.iter().any(|c| (p - c).norm() <= radius))
        .collect();
    let collar: Vec<bool> = faces.iter().map(|f| f.iter().any(|&v| near[v])).collect();

    let nv = pos.len();
    let mut in_collar = vec![false; nv];
    let mut outside = vec![false; nv];
    for (f, face) in faces.iter().enumerate() {
        for &v in face {
            if collar[f] {
                in_collar[v] = true;
            } else {
                outside[v] = true;
            }
        }
    }
    let interior: Vec<bool> = (0..nv).map(|v| in_collar[v] && !outside[v]).collect();

    let mut p = pos;
    for _ in 0..cfg.smoothing_iterations {
        let prev = p.clone();
        for v in 0..nv {
            let nb = mesh.neighbors(v);
            if interior[v] && !nb.is_empty() {
                p[v] = nb.iter().map(|&j| prev[j]).sum::<Point3>() / nb.len() as f64;
            }
        }
    }
    mesh.set_positions(p);

    let mut fixed: BTreeMap<usize, Point2> = BTreeMap::new();
    for (f, face) in faces.iter().enumerate() {
        if !collar[f] {
            for (k, &v) in face.iter().enumerate() {
                if in_collar[v] {
                    fixed.entry(v).or_insert(uv[f][k]);
                }
            }
        }
    }
    if curve.is_empty() {
        // nothing to stitch
    } else {
        match harmonic_extension(&mesh, &in_collar, &fixed) {
            Ok(vuv) => {
                for (f, face) in faces.iter().enumerate() {
                    if collar[f] {
                        uv[f] = face.map(|v| vuv[v]);
                    }
                }
            }
            Err(e) => warnings.push(format!("junction UVs left unstitched: {e}")),
        }
    }

    Ok(MergeOutput {
        mesh: TexturedMesh {
            mesh,
            uv,
            page,
            flags,
            mirror_of,
        },
        origin,
        collar,
        warnings,
    })
}

/// Largest difference between the UVs two faces give a shared vertex, over
/// edges with at least one collar face.
pub fn max_collar_uv_jump(tm: &TexturedMesh, collar: &[bool]) -> f64 {
    let faces = tm.mesh.faces();
    let corner = |f: usize, v: usize| faces[f].iter().position(|&x| x == v).map(|k| tm.uv[f][k]);
    let mut worst: f64 = 0.0;
    for (e, ends) in tm.mesh.edges().iter().enumerate() {
        let fs = tm.mesh.edge_faces(e);
        if fs.len() != 2 || !(collar[fs[0]] || collar[fs[1]]) {
            continue;
        }
        for &v in ends {
            if let (Some(a), Some(b)) = (corner(fs[0], v), corner(fs[1], v)) {
                worst = worst.max((a - b).norm());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::icosphere;
    use crate::texturer::FaceFlag;

    fn ball(center: Point3, r: f64, levels: usize) -> TexturedMesh {
        let s = icosphere(levels);
        let pos = s.positions().iter().map(|p| center + p * r).collect();
        let mesh = TriangleMesh::new(pos, s.faces().to_vec()).unwrap();
        // seamless per-vertex UVs, like a textured part
        let uv: Vec<[Point2; 3]> = mesh
            .faces()
            .iter()
            .map(|f| f.map(|v| (mesh.positions()[v].xy() + Point2::new(2.0, 2.0)) / 4.0))
            .collect();
        let n = mesh.face_count();
        TexturedMesh {
            mesh,
            uv,
            page: vec![0; n],
            flags: vec![FaceFlag::Faithful; n],
            mirror_of: vec![None; n],
        }
    }

    fn part(name: &str, mesh: TexturedMesh) -> MergePart {
        MergePart { name: name.into(), mesh }
    }

    fn two_balls() -> Vec<MergePart> {
        vec![
            part("body", ball(Point3::zeros(), 1.0, 3)),
            part("head", ball(Point3::new(1.3, 0.2, 0.1), 0.6, 3)),
        ]
    }

    #[test]
    fn two_spheres_union_is_a_closed_sphere() {
        let out = merge_parts(&two_balls(), &[(1, 0)], 0, &MergeConfig::default()).unwrap();
        let m = &out.mesh.mesh;
        assert!(m.is_closed());
        assert!(m.is_oriented_manifold());
        assert_eq!(m.euler_characteristic(), 2);
        assert!(out.collar.iter().any(|c| *c));
        assert!(out.origin.contains(&0) && out.origin.contains(&1));
    }

    #[test]
    fn uvs_outside_collars_are_unchanged() {
        let parts = two_balls();
        let out = merge_parts(&parts, &[(1, 0)], 0, &MergeConfig::default()).unwrap();
        let tm = &out.mesh;
        // outside collars each face is an untouched input face
        let mut checked = 0;
        for f in 0..tm.face_count() {
            if out.collar[f] {
                continue;
            }
            let src = &parts[out.origin[f]].mesh;
            let face = tm.mesh.faces()[f];
            let key = face.map(|v| tm.mesh.positions()[v]);
            let g = (0..src.face_count())
                .find(|&g| {
                    let sf = src.mesh.faces()[g];
                    let sp = sf.map(|v| src.mesh.positions()[v]);
                    (0..3).all(|k| sp.contains(&key[k]))
                })
                .expect("face kept from its part");
            for k in 0..3 {
                let sk = src.mesh.faces()[g]
                    .iter()
                    .position(|&v| src.mesh.positions()[v] == key[k])
                    .unwrap();
                assert_eq!(tm.uv[f][k], src.uv[g][sk]);
            }
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn collar_uv_jump_is_below_one_texel() {
        let out = merge_parts(&two_balls(), &[(1, 0)], 0, &MergeConfig::default()).unwrap();
        let jump = max_collar_uv_jump(&out.mesh, &out.collar);
        assert!(jump < 1.0 / 400.0, "{jump}");
    }

    #[test]
    fn single_part_is_unchanged() {
        let parts = vec![part("solo", ball(Point3::zeros(), 1.0, 2))];
        let out = merge_parts(&parts, &[], 0, &MergeConfig::default()).unwrap();
        assert_eq!(out.mesh.mesh.positions(), parts[0].mesh.mesh.positions());
        assert_eq!(out.mesh.uv, parts[0].mesh.uv);
        let again = merge_parts(&[part("m", out.mesh.clone())], &[], 0, &MergeConfig::default()).unwrap();
        assert_eq!(again.mesh.mesh.faces(), out.mesh.mesh.faces());
    }

    #[test]
    fn separated_connection_is_reported() {
        let parts = vec![
            part("body", ball(Point3::zeros(), 1.0, 2)),
            part("tail", ball(Point3::new(5.0, 0.0, 0.0), 0.5, 2)),
        ];
        match merge_parts(&parts, &[(1, 0)], 0, &MergeConfig::default()) {
            Err(Error::NotIntersecting(a, b)) => assert_eq!((a.as_str(), b.as_str()), ("tail", "body")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bfs_order_visits_by_level() {
        assert_eq!(union_order(5, &[(1, 0), (2, 0), (3, 1), (4, 2)], 0).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(union_order(3, &[(0, 2), (1, 2)], 2).unwrap(), vec![2, 0, 1]);
        assert!(union_order(3, &[(1, 0)], 0).is_err());
    }

    #[test]
    fn chain_of_three_is_closed() {
        let parts = vec![
            part("a", ball(Point3::zeros(), 1.0, 3)),
            part("b", ball(Point3::new(1.2, 0.0, 0.05), 0.5, 3)),
            part("c", ball(Point3::new(-1.1, 0.3, -0.1), 0.4, 3)),
        ];
        let out = merge_parts(&parts, &[(1, 0), (2, 0)], 0, &MergeConfig::default()).unwrap();
        assert!(out.mesh.mesh.is_closed() && out.mesh.mesh.is_oriented_manifold());
        assert_eq!(out.mesh.mesh.euler_characteristic(), 2);
    }
}
