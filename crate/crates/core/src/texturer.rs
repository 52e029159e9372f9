//! Texture coordinates into the drawing: projection, harmonic relaxation,
//! mirroring across the symmetry plane and ill-textured face detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, ConstraintKind, Half, Point2, SymmetricPartMesh, TriangleMesh};
use crate::linalg::factorize_spd;

/// Where a face's texture comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceFlag {
    /// Projected from the drawing.
    Faithful,
    /// Copied from the symmetric partner face.
    Mirrored,
    /// No trustworthy source in the drawing.
    Ill,
    /// Synthesized by the inpainter.
    Inpainted,
}

/// Maps normalized drawing coordinates to image UVs.
///
/// Drawing coordinates put the image's bounding square at `[0,1]²` with the
/// origin at the bottom-left corner. UVs span the image itself, `v` up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawingFrame {
    pub width: u32,
    pub height: u32,
}

impl DrawingFrame {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    fn side(&self) -> f64 {
        self.width.max(self.height).max(1) as f64
    }

    /// Unclamped UV of a drawing point.
    pub fn uv(&self, p: &Point2) -> Point2 {
        let s = self.side();
        Point2::new(p.x * s / self.width.max(1) as f64, p.y * s / self.height.max(1) as f64)
    }

    /// Drawing coordinates of a pixel center given in image rows from the
    /// top.
    pub fn from_pixel(&self, px: f64, py: f64) -> Point2 {
        let s = self.side();
        Point2::new(px / s, (self.height as f64 - py) / s)
    }

    /// Pixel coordinates (x right, y down) of a UV.
    pub fn uv_to_pixel(&self, uv: &Point2) -> (f64, f64) {
        (uv.x * self.width as f64, (1.0 - uv.y) * self.height as f64)
    }
}

/// Per-vertex UVs of the orthogonal projection, clamped to the image, and
/// which vertices needed clamping.
pub fn project_uv(part: &SymmetricPartMesh, frame: &DrawingFrame) -> (Vec<Point2>, Vec<bool>) {
    part.mesh
        .positions()
        .iter()
        .map(|p| {
            let uv = frame.uv(&project(p));
            let c = Point2::new(uv.x.clamp(0.0, 1.0), uv.y.clamp(0.0, 1.0));
            (c, c != uv)
        })
        .unzip()
}

/// Summed projected area of front-facing faces in the front and back half.
pub fn visible_half_areas(part: &SymmetricPartMesh) -> (f64, f64) {
    let mesh = &part.mesh;
    let mut front = 0.0;
    let mut back = 0.0;
    for f in 0..mesh.face_count() {
        let z = mesh.face_cross(f).z * 0.5;
        if z <= 0.0 {
            continue;
        }
        match part.face_half(f) {
            Half::Back => back += z,
            _ => front += z,
        }
    }
    (front, back)
}

/// The half that keeps its projected texture; ties go to the front.
pub fn faithful_half(part: &SymmetricPartMesh) -> Half {
    let (front, back) = visible_half_areas(part);
    if back > front {
        Half::Back
    } else {
        Half::Front
    }
}

/// Harmonic extension under uniform weights of `fixed` values over the
/// vertices with `region[v]` set. Neighbors outside the region are ignored.
/// Fails when a connected piece of the free vertices touches no fixed
/// vertex.
pub fn harmonic_extension(
    mesh: &TriangleMesh,
    region: &[bool],
    fixed: &BTreeMap<usize, Point2>,
) -> Result<Vec<Point2>> {
    if fixed.is_empty() {
        return Err(Error::EmptyConstraints);
    }
    let n = mesh.vertex_count();
    let mut index = vec![usize::MAX; n];
    let mut free = Vec::new();
    for v in 0..n {
        if region[v] && !fixed.contains_key(&v) {
            index[v] = free.len();
            free.push(v);
        }
    }
    let mut out: Vec<Point2> = (0..n).map(|v| fixed.get(&v).copied().unwrap_or_else(Point2::zeros)).collect();
    if free.is_empty() {
        return Ok(out);
    }
    let mut entries = Vec::new();
    let mut rhs_u = vec![0.0; free.len()];
    let mut rhs_v = vec![0.0; free.len()];
    for (r, &v) in free.iter().enumerate() {
        let nb: Vec<usize> = mesh.neighbors(v).iter().copied().filter(|&j| region[j]).collect();
        if nb.is_empty() {
            return Err(Error::Disconnected(format!("vertex {v} has no neighbors in the region")));
        }
        entries.push((r, r, nb.len() as f64));
        for j in nb {
            if let Some(val) = fixed.get(&j) {
                rhs_u[r] += val.x;
                rhs_v[r] += val.y;
            } else {
                entries.push((r, index[j], -1.0));
            }
        }
    }
    let factor = factorize_spd(free.len(), &entries)
        .map_err(|_| Error::Disconnected("part of the region has no fixed vertex".into()))?;
    let sol = factor.solve_columns(&[rhs_u, rhs_v]);
    for (r, &v) in free.iter().enumerate() {
        out[v] = Point2::new(sol[0][r], sol[1][r]);
    }
    Ok(out)
}

/// Vertices of a half together with the midline.
pub fn half_region(part: &SymmetricPartMesh, half: Half) -> Vec<bool> {
    (0..part.mesh.vertex_count())
        .map(|v| {
            let h = part.half(v);
            h == half || h == Half::Midline
        })
        .collect()
}

/// Harmonic UVs on the `half` side, pinned at `constraints`.
pub fn harmonic_uv(part: &SymmetricPartMesh, half: Half, constraints: &BTreeMap<usize, Point2>) -> Result<Vec<Point2>> {
    harmonic_extension(&part.mesh, &half_region(part, half), constraints)
}

/// Pinned UVs: matched silhouette, landmark and every midline vertex on the
/// faithful side, at their projected UVs.
pub fn uv_constraints(part: &SymmetricPartMesh, half: Half, projected: &[Point2]) -> BTreeMap<usize, Point2> {
    let region = half_region(part, half);
    let mut fixed: BTreeMap<usize, Point2> = part.midline.iter().map(|&v| (v, projected[v])).collect();
    for c in &part.constraints {
        if region[c.vertex] && matches!(c.kind, ConstraintKind::Outline | ConstraintKind::Landmark) {
            fixed.insert(c.vertex, projected[c.vertex]);
        }
    }
    fixed
}

/// A part with per-vertex UVs on the drawing page.
#[derive(Clone, Debug)]
pub struct TexturedPart {
    pub part: SymmetricPartMesh,
    pub uv: Vec<Point2>,
    pub flags: Vec<FaceFlag>,
    pub faithful: Half,
}

/// Copies UVs from the faithful half to the other one and flags faces.
pub fn mirror_texture(part: &SymmetricPartMesh, faithful: Half, uv: &[Point2]) -> TexturedPart {
    let mut out = uv.to_vec();
    for v in 0..part.mesh.vertex_count() {
        let h = part.half(v);
        if h != faithful && h != Half::Midline {
            out[v] = uv[part.partner(v)];
        }
    }
    let flags = (0..part.mesh.face_count())
        .map(|f| {
            let h = part.face_half(f);
            if h == faithful || h == Half::Midline {
                FaceFlag::Faithful
            } else {
                FaceFlag::Mirrored
            }
        })
        .collect();
    TexturedPart {
        part: part.clone(),
        uv: out,
        flags,
        faithful,
    }
}

/// Projection, harmonic relaxation and mirroring for one part. Faces with a
/// clamped corner are flagged ill.
pub fn texture_part(part: &SymmetricPartMesh, frame: &DrawingFrame) -> Result<TexturedPart> {
    let (projected, clamped) = project_uv(part, frame);
    let half = faithful_half(part);
    let fixed = uv_constraints(part, half, &projected);
    let uv = harmonic_uv(part, half, &fixed)?;
    let mut tp = mirror_texture(part, half, &uv);
    for (f, face) in part.mesh.faces().iter().enumerate() {
        if face.iter().any(|&v| clamped[v] || clamped[part.partner(v)]) {
            tp.flags[f] = FaceFlag::Ill;
        }
    }
    Ok(tp)
}

/// Triangle mesh with per-corner UVs on one of several texture pages.
#[derive(Clone, Debug)]
pub struct TexturedMesh {
    pub mesh: TriangleMesh,
    pub uv: Vec<[Point2; 3]>,
    /// 0 is the drawing, 1 the inpainting page.
    pub page: Vec<u8>,
    pub flags: Vec<FaceFlag>,
    /// Faithful source face of each mirrored face.
    pub mirror_of: Vec<Option<usize>>,
}

impl TexturedMesh {
    pub fn face_count(&self) -> usize {
        self.mesh.face_count()
    }

    pub fn count(&self, flag: FaceFlag) -> usize {
        self.flags.iter().filter(|&&f| f == flag).count()
    }
}

impl TexturedPart {
    pub fn to_mesh(&self) -> TexturedMesh {
        let faces = self.part.mesh.faces();
        TexturedMesh {
            mesh: self.part.mesh.clone(),
            uv: faces.iter().map(|f| [self.uv[f[0]], self.uv[f[1]], self.uv[f[2]]]).collect(),
            page: vec![0; faces.len()],
            flags: self.flags.clone(),
            mirror_of: (0..faces.len())
                .map(|f| {
                    let g = self.part.face_partner[f];
                    (self.flags[f] != FaceFlag::Faithful && self.flags[g] == FaceFlag::Faithful).then_some(g)
                })
                .collect(),
        }
    }
}

/// Ill-texture detection settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IllConfig {
    /// Side of the UV-space depth buffer.
    pub resolution: usize,
    /// A face is ill when more than this fraction of its samples is owned
    /// by nearer faces.
    pub lost_fraction: f64,
    /// Depth differences below this are ties.
    pub depth_tolerance: f64,
}

impl Default for IllConfig {
    fn default() -> Self {
        Self {
            resolution: 512,
            lost_fraction: 0.5,
            depth_tolerance: 1e-7,
        }
    }
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

/// Texel centers inside a UV triangle, plus its centroid.
fn samples(uv: &[Point2; 3], res: usize) -> Vec<(usize, usize, [f64; 3])> {
    let scale = res as f64;
    let lo = uv.iter().fold(Point2::repeat(f64::INFINITY), |m, p| m.inf(p)) * scale;
    let hi = uv.iter().fold(Point2::repeat(f64::NEG_INFINITY), |m, p| m.sup(p)) * scale;
    let mut out = Vec::new();
    let x0 = (lo.x - 0.5).ceil().max(0.0) as usize;
    let y0 = (lo.y - 0.5).ceil().max(0.0) as usize;
    let x1 = ((hi.x - 0.5).floor().min(scale - 1.0)).max(-1.0);
    let y1 = ((hi.y - 0.5).floor().min(scale - 1.0)).max(-1.0);
    if x1 >= 0.0 && y1 >= 0.0 {
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let p = Point2::new((x as f64 + 0.5) / scale, (y as f64 + 0.5) / scale);
                if let Some(b) = barycentric(&p, &uv[0], &uv[1], &uv[2]) {
                    if b.iter().all(|&l| l >= -1e-12) {
                        out.push((x, y, b));
                    }
                }
            }
        }
    }
    if out.is_empty() {
        let c = (uv[0] + uv[1] + uv[2]) / 3.0;
        let x = ((c.x * scale).floor().max(0.0) as usize).min(res - 1);
        let y = ((c.y * scale).floor().max(0.0) as usize).min(res - 1);
        out.push((x, y, [1.0 / 3.0; 3]));
    }
    out
}

/// Flags faithful drawing-page faces hidden behind nearer faces sharing
/// their UV footprint, then the mirrored faces copying them.
///
/// The viewer sits at `+z`, so the nearest face has the largest `z`.
/// Returns the number of newly flagged faces.
pub fn detect_ill_textured(tm: &mut TexturedMesh, cfg: &IllConfig) -> usize {
    let res = cfg.resolution.max(1);
    let pos = tm.mesh.positions();
    let faces = tm.mesh.faces();
    let candidates: Vec<usize> = (0..tm.face_count())
        .filter(|&f| tm.flags[f] == FaceFlag::Faithful && tm.page[f] == 0)
        .collect();
    let mut depth = vec![f64::NEG_INFINITY; res * res];
    let mut face_samples = Vec::with_capacity(candidates.len());
    for &f in &candidates {
        let s = samples(&tm.uv[f], res);
        let zs: Vec<(usize, f64)> = s
            .iter()
            .map(|&(x, y, b)| {
                let z = b[0] * pos[faces[f][0]].z + b[1] * pos[faces[f][1]].z + b[2] * pos[faces[f][2]].z;
                let k = y * res + x;
                if z > depth[k] {
                    depth[k] = z;
                }
                (k, z)
            })
            .collect();
        face_samples.push(zs);
    }
    let mut flagged = 0;
    for (&f, zs) in candidates.iter().zip(&face_samples) {
        let lost = zs.iter().filter(|&&(k, z)| depth[k] > z + cfg.depth_tolerance).count();
        if lost as f64 > cfg.lost_fraction * zs.len() as f64 {
            tm.flags[f] = FaceFlag::Ill;
            flagged += 1;
        }
    }
    for f in 0..tm.face_count() {
        if tm.flags[f] == FaceFlag::Mirrored {
            if let Some(src) = tm.mirror_of[f] {
                if tm.flags[src] == FaceFlag::Ill {
                    tm.flags[f] = FaceFlag::Ill;
                    flagged += 1;
                }
            }
        }
    }
    flagged
}
