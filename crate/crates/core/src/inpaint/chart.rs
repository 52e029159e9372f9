//! Planar charts for the faces to inpaint and their packing into a page.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Point3, TriangleMesh};
use crate::linalg::{LeastSquares, VariableMap};
use crate::part_builder::boundary_loop;
use crate::texturer::harmonic_extension;

/// One flattened region: target faces plus a collar of source faces.
#[derive(Clone, Debug)]
pub struct Chart {
    /// Mesh face indices.
    pub faces: Vec<usize>,
    pub is_target: Vec<bool>,
    /// Page UVs per chart face.
    pub uv: Vec<[Point2; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelKind {
    Empty,
    Target,
    Collar,
}

/// Surface point seen by one page pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelOwner {
    pub chart: u32,
    /// Index into the chart's face list.
    pub local: u32,
    pub bary: [f32; 3],
}

/// All charts of one target set, packed into a page.
#[derive(Clone, Debug)]
pub struct TargetAtlas {
    pub width: usize,
    pub height: usize,
    pub charts: Vec<Chart>,
    pub kind: Vec<PixelKind>,
    pub owner: Vec<Option<PixelOwner>>,
    /// Chart and local index of every target face.
    pub face_chart: Vec<Option<(u32, u32)>>,
    /// Page pixels per model unit.
    pub scale: f64,
}

impl TargetAtlas {
    /// Page UV of a target face.
    pub fn target_uv(&self, face: usize) -> Option<[Point2; 3]> {
        self.face_chart[face].map(|(c, l)| self.charts[c as usize].uv[l as usize])
    }

    pub fn pixel_center(&self, x: usize, y: usize) -> Point2 {
        Point2::new((x as f64 + 0.5) / self.width as f64, 1.0 - (y as f64 + 0.5) / self.height as f64)
    }
}

/// Faces sharing a vertex with `seed`, repeated `rings` times, restricted
/// to `allowed`.
fn collar(mesh: &TriangleMesh, seed: &[usize], rings: usize, allowed: &[bool]) -> Vec<usize> {
    let mut inside: BTreeSet<usize> = seed.iter().copied().collect();
    let mut frontier: Vec<usize> = seed.to_vec();
    let mut out = BTreeSet::new();
    for _ in 0..rings {
        let mut next = Vec::new();
        for &f in &frontier {
            for &v in &mesh.faces()[f] {
                for &g in mesh.vertex_faces(v) {
                    if allowed[g] && inside.insert(g) {
                        out.insert(g);
                        next.push(g);
                    }
                }
            }
        }
        frontier = next;
    }
    out.into_iter().collect()
}

/// Sub-mesh of `faces` with local vertex numbering.
fn submesh(mesh: &TriangleMesh, faces: &[usize]) -> Result<(TriangleMesh, Vec<usize>)> {
    let mut local = BTreeMap::new();
    let mut verts = Vec::new();
    let mut tris = Vec::with_capacity(faces.len());
    for &f in faces {
        let t = mesh.faces()[f].map(|v| {
            *local.entry(v).or_insert_with(|| {
                verts.push(v);
                verts.len() - 1
            })
        });
        tris.push(t);
    }
    let pos = verts.iter().map(|&v| mesh.positions()[v]).collect();
    Ok((TriangleMesh::new(pos, tris)?, verts))
}

fn signed_area(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    0.5 * (b - a).perp(&(c - a))
}

fn all_positive(mesh: &TriangleMesh, uv: &[Point2]) -> bool {
    mesh.faces()
        .iter()
        .all(|f| signed_area(&uv[f[0]], &uv[f[1]], &uv[f[2]]) > 0.0)
}

/// Least-squares conformal map of a disk-like patch with two boundary
/// vertices pinned at their 3D distance.
pub fn lscm(mesh: &TriangleMesh, boundary: &[usize]) -> Result<Vec<Point2>> {
    let n = mesh.vertex_count();
    let p = mesh.positions();
    let far = |from: usize| {
        *boundary
            .iter()
            .max_by(|&&a, &&b| (p[a] - p[from]).norm().total_cmp(&(p[b] - p[from]).norm()))
            .unwrap()
    };
    let b = far(boundary[0]);
    let a = far(b);
    if a == b {
        return Err(Error::Parameterization("degenerate boundary".into()));
    }
    let mut map = VariableMap::new(2 * n, 2 * n - 4);
    let mut next = 0;
    for v in 0..n {
        if v == a {
            map.set(2 * v, vec![], 0.0);
            map.set(2 * v + 1, vec![], 0.0);
        } else if v == b {
            map.set(2 * v, vec![], (p[a] - p[b]).norm());
            map.set(2 * v + 1, vec![], 0.0);
        } else {
            map.set(2 * v, vec![(next, 1.0)], 0.0);
            map.set(2 * v + 1, vec![(next + 1, 1.0)], 0.0);
            next += 2;
        }
    }
    let mut ls = LeastSquares::new(map);
    for f in mesh.faces() {
        let (p0, p1, p2) = (p[f[0]], p[f[1]], p[f[2]]);
        let e1 = (p1 - p0).normalize();
        let nrm = (p1 - p0).cross(&(p2 - p0));
        let area2 = nrm.norm();
        if area2 < 1e-300 {
            continue;
        }
        let e2 = (nrm / area2).cross(&e1);
        let local = |q: Point3| Point2::new((q - p0).dot(&e1), (q - p0).dot(&e2));
        let xy = [Point2::zeros(), local(p1), local(p2)];
        let w = 1.0 / area2;
        let mut re = Vec::with_capacity(6);
        let mut im = Vec::with_capacity(6);
        for j in 0..3 {
            let d = xy[(j + 2) % 3] - xy[(j + 1) % 3];
            let (wr, wi) = (d.x, d.y);
            re.push((2 * f[j], wr));
            re.push((2 * f[j] + 1, -wi));
            im.push((2 * f[j], wi));
            im.push((2 * f[j] + 1, wr));
        }
        ls.push(&re, w);
        ls.push(&im, w);
    }
    let b_rhs = vec![0.0; ls.rows()];
    let factor = ls.factorize().map_err(|e| Error::Parameterization(e.to_string()))?;
    let x = ls.solve(&factor, &b_rhs);
    Ok((0..n).map(|v| Point2::new(x[2 * v], x[2 * v + 1])).collect())
}

/// Uniform-weight Tutte embedding with the boundary on a circle.
pub fn tutte(mesh: &TriangleMesh, boundary: &[usize]) -> Result<Vec<Point2>> {
    let p = mesh.positions();
    let mut cum = vec![0.0];
    for i in 0..boundary.len() {
        let d = (p[boundary[(i + 1) % boundary.len()]] - p[boundary[i]]).norm();
        cum.push(cum[i] + d);
    }
    let total = *cum.last().unwrap();
    let fixed: BTreeMap<usize, Point2> = boundary
        .iter()
        .zip(&cum)
        .map(|(&v, &s)| {
            let t = std::f64::consts::TAU * s / total;
            (v, Point2::new(t.cos(), t.sin()))
        })
        .collect();
    harmonic_extension(mesh, &vec![true; mesh.vertex_count()], &fixed)
}

/// Flattens a disk-like patch; LSCM first, Tutte when LSCM flips a
/// triangle. The result is scaled to the patch's surface area.
pub fn flatten_disk(mesh: &TriangleMesh) -> Result<Vec<Point2>> {
    let boundary = boundary_loop(mesh)?;
    let mut uv = match lscm(mesh, &boundary) {
        Ok(mut uv) => {
            if !all_positive(mesh, &uv) {
                for q in &mut uv {
                    q.y = -q.y;
                }
            }
            uv
        }
        Err(_) => Vec::new(),
    };
    if uv.is_empty() || !all_positive(mesh, &uv) {
        uv = tutte(mesh, &boundary)?;
        if !all_positive(mesh, &uv) {
            return Err(Error::Parameterization("no injective map found".into()));
        }
    }
    let area3 = mesh.total_area();
    let area2: f64 = mesh.faces().iter().map(|f| signed_area(&uv[f[0]], &uv[f[1]], &uv[f[2]])).sum();
    let s = (area3 / area2).sqrt();
    for q in &mut uv {
        *q *= s;
    }
    Ok(uv)
}

/// Splits a face set into two edge-connected halves by breadth-first order
/// from a far face.
fn split(mesh: &TriangleMesh, faces: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let member: BTreeSet<usize> = faces.iter().copied().collect();
    let bfs = |start: usize| {
        let mut seen = BTreeSet::from([start]);
        let mut order = vec![start];
        let mut q = VecDeque::from([start]);
        while let Some(f) = q.pop_front() {
            let t = mesh.faces()[f];
            for k in 0..3 {
                let e = mesh.edge_index(t[k], t[(k + 1) % 3]).unwrap();
                for &g in mesh.edge_faces(e) {
                    if member.contains(&g) && seen.insert(g) {
                        order.push(g);
                        q.push_back(g);
                    }
                }
            }
        }
        order
    };
    let far = *bfs(faces[0]).last().unwrap();
    let order = bfs(far);
    let half = order.len().div_ceil(2);
    let mut a = order[..half].to_vec();
    let mut b = order[half..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

struct LocalChart {
    faces: Vec<usize>,
    is_target: Vec<bool>,
    uv: Vec<[Point2; 3]>,
}

fn flatten_piece(mesh: &TriangleMesh, piece: &[usize], source: &[bool], rings: usize, out: &mut Vec<LocalChart>) -> Result<()> {
    let extra = collar(mesh, piece, rings, source);
    let mut faces = piece.to_vec();
    faces.extend(&extra);
    let attempt = submesh(mesh, &faces).and_then(|(sub, _)| flatten_disk(&sub).map(|uv| (sub, uv)));
    match attempt {
        Ok((sub, uv)) => {
            out.push(LocalChart {
                is_target: (0..faces.len()).map(|i| i < piece.len()).collect(),
                uv: sub.faces().iter().map(|f| f.map(|v| uv[v])).collect(),
                faces,
            });
            Ok(())
        }
        Err(e) => {
            if piece.len() > 1 {
                let (a, b) = split(mesh, piece);
                for half in [a, b] {
                    for comp in mesh.face_components(&half) {
                        flatten_piece(mesh, &comp, source, rings, out)?;
                    }
                }
                Ok(())
            } else if rings > 0 {
                flatten_piece(mesh, piece, source, 0, out)
            } else {
                Err(e)
            }
        }
    }
}

/// Shelf placement of `boxes` (width, height in pixels); returns offsets or
/// `None` when they do not fit.
fn shelf_pack(boxes: &[(f64, f64)], width: f64, height: f64) -> Option<Vec<(f64, f64)>> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].1.total_cmp(&boxes[a].1).then(a.cmp(&b)));
    let mut out = vec![(0.0, 0.0); boxes.len()];
    let (mut x, mut y, mut shelf) = (0.0, 0.0, 0.0f64);
    for i in order {
        let (w, h) = boxes[i];
        if w > width {
            return None;
        }
        if x + w > width {
            x = 0.0;
            y += shelf;
            shelf = 0.0;
        }
        if y + h > height {
            return None;
        }
        out[i] = (x, y);
        x += w;
        shelf = shelf.max(h);
    }
    Some(out)
}

fn barycentric(p: &Point2, a: &Point2, b: &Point2, c: &Point2) -> Option<[f64; 3]> {
    let d = (b - a).perp(&(c - a));
    if d.abs() < 1e-300 {
        return None;
    }
    let l1 = (b - p).perp(&(c - p)) / d;
    let l2 = (c - p).perp(&(a - p)) / d;
    Some([l1, l2, 1.0 - l1 - l2])
}

/// Flattens each connected component of `target` with a collar of
/// `rings` face rings and packs the charts into a `width × height` page
/// with `padding` pixels around each chart.
pub fn parameterize_target(
    mesh: &TriangleMesh,
    target: &[bool],
    width: usize,
    height: usize,
    rings: usize,
    padding: usize,
) -> Result<TargetAtlas> {
    let source: Vec<bool> = target.iter().map(|t| !t).collect();
    let target_faces: Vec<usize> = (0..mesh.face_count()).filter(|&f| target[f]).collect();
    let mut locals = Vec::new();
    for comp in mesh.face_components(&target_faces) {
        flatten_piece(mesh, &comp, &source, rings, &mut locals)?;
    }
    let bounds: Vec<(Point2, Point2)> = locals
        .iter()
        .map(|c| {
            c.uv.iter().flatten().fold(
                (Point2::repeat(f64::INFINITY), Point2::repeat(f64::NEG_INFINITY)),
                |(lo, hi), p| (lo.inf(p), hi.sup(p)),
            )
        })
        .collect();
    let pad = 2.0 * padding as f64;
    let boxes_at = |s: f64| -> Vec<(f64, f64)> {
        bounds
            .iter()
            .map(|(lo, hi)| ((hi.x - lo.x) * s + pad, (hi.y - lo.y) * s + pad))
            .collect()
    };
    let (w, h) = (width as f64, height as f64);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while shelf_pack(&boxes_at(hi), w, h).is_some() && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if shelf_pack(&boxes_at(mid), w, h).is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = lo;
    if locals.is_empty() {
        return Ok(TargetAtlas {
            width,
            height,
            charts: Vec::new(),
            kind: vec![PixelKind::Empty; width * height],
            owner: vec![None; width * height],
            face_chart: vec![None; mesh.face_count()],
            scale: 0.0,
        });
    }
    if scale <= 0.0 {
        return Err(Error::Parameterization("charts do not fit the page".into()));
    }
    let offsets = shelf_pack(&boxes_at(scale), w, h).unwrap();
    let mut charts = Vec::with_capacity(locals.len());
    let mut face_chart = vec![None; mesh.face_count()];
    for (ci, (local, ((lo, _), &(ox, oy)))) in locals.into_iter().zip(bounds.iter().zip(&offsets)).enumerate() {
        // offsets are measured from the bottom-left so orientation is kept
        let to_uv = |p: &Point2| {
            let px = (p.x - lo.x) * scale + padding as f64 + ox;
            let py = (p.y - lo.y) * scale + padding as f64 + oy;
            Point2::new(px / w, py / h)
        };
        let uv: Vec<[Point2; 3]> = local.uv.iter().map(|t| t.map(|p| to_uv(&p))).collect();
        for (li, (&f, &t)) in local.faces.iter().zip(&local.is_target).enumerate() {
            if t {
                face_chart[f] = Some((ci as u32, li as u32));
            }
        }
        charts.push(Chart {
            faces: local.faces,
            is_target: local.is_target,
            uv,
        });
    }
    let mut kind = vec![PixelKind::Empty; width * height];
    let mut owner = vec![None; width * height];
    for pass_target in [false, true] {
        for (ci, chart) in charts.iter().enumerate() {
            for (li, uv) in chart.uv.iter().enumerate() {
                if chart.is_target[li] != pass_target {
                    continue;
                }
                let px: Vec<(f64, f64)> = uv.iter().map(|p| (p.x * w - 0.5, (1.0 - p.y) * h - 0.5)).collect();
                let x0 = px.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
                let x1 = px.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).floor().min(w - 1.0);
                let y0 = px.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
                let y1 = px.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).floor().min(h - 1.0);
                if x1 < 0.0 || y1 < 0.0 {
                    continue;
                }
                for y in y0..=y1 as usize {
                    for x in x0..=x1 as usize {
                        let c = Point2::new((x as f64 + 0.5) / w, 1.0 - (y as f64 + 0.5) / h);
                        let Some(b) = barycentric(&c, &uv[0], &uv[1], &uv[2]) else {
                            continue;
                        };
                        if b.iter().any(|&l| l < -1e-9) {
                            continue;
                        }
                        let i = y * width + x;
                        if pass_target || kind[i] == PixelKind::Empty {
                            kind[i] = if pass_target { PixelKind::Target } else { PixelKind::Collar };
                            owner[i] = Some(PixelOwner {
                                chart: ci as u32,
                                local: li as u32,
                                bary: b.map(|l| l as f32),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(TargetAtlas {
        width,
        height,
        charts,
        kind,
        owner,
        face_chart,
        scale,
    })
}
