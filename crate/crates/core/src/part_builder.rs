//! Initial symmetric part meshes from outlines, symmetry-plane rotation and
//! outline-to-silhouette matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use spade::{AngleLimit, ConstrainedDelaunayTriangulation, RefinementParameters, Triangulation};

use crate::error::{Error, Result};
use crate::geometry::{
    polygon, project, rotate_about, ConstraintKind, Plane, Point2, Point3, ProjectionConstraint, SymmetricPartMesh,
    TriangleMesh,
};

/// The user annotations for one body part, in normalized drawing
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub outline: Vec<Point2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub midline: Option<Vec<Point2>>,
    /// Directed segment whose direction is the projected plane normal and
    /// whose length encodes the rotation angle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[Point2; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub landmarks: Vec<[Point2; 2]>,
    #[serde(default = "default_thickness")]
    pub thickness: f64,
}

fn default_thickness() -> f64 {
    1.0
}

impl AnnotationSet {
    pub fn new(outline: Vec<Point2>) -> Self {
        Self {
            outline,
            midline: None,
            rotation: None,
            landmarks: Vec::new(),
            thickness: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let outline = canonical_outline(&self.outline)?;
        if !(self.thickness > 0.0 && self.thickness.is_finite()) {
            return Err(Error::InvalidOutline("thickness must be positive".into()));
        }
        for pair in &self.landmarks {
            for p in pair {
                if !polygon::contains(&outline, p) {
                    return Err(Error::InvalidOutline(format!(
                        "landmark ({:.4}, {:.4}) lies outside the outline",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Rotation of the symmetry plane about an in-plane axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    /// Unit axis direction with zero z component.
    pub axis: Point3,
    /// A point on the axis, in the drawing plane.
    pub point: Point3,
    /// Angle in radians, right-hand rule about `axis`.
    pub angle: f64,
}

impl RotationSpec {
    pub fn identity() -> Self {
        Self {
            axis: Point3::y(),
            point: Point3::zeros(),
            angle: 0.0,
        }
    }

    /// Normal of the drawing plane after this rotation.
    pub fn normal(&self) -> Point3 {
        rotate_about(&Point3::z(), &self.axis, self.angle, &Point3::zeros())
    }

    /// Rotation taking the drawing-plane normal to `normal` about an
    /// in-plane axis through `point`.
    pub fn toward(normal: &Point3, point: &Point2) -> Self {
        let n = normal.normalize();
        let axis = Point3::z().cross(&n);
        let s = axis.norm();
        if s < 1e-12 {
            return Self {
                point: Point3::new(point.x, point.y, 0.0),
                ..Self::identity()
            };
        }
        Self {
            axis: axis / s,
            point: Point3::new(point.x, point.y, 0.0),
            angle: s.atan2(n.z),
        }
    }

    /// The rotated drawing plane.
    pub fn plane(&self) -> Plane {
        Plane::drawing().rotated(&self.axis, self.angle, &self.point)
    }
}

/// Deduplicated, simple, counterclockwise outline starting at its
/// lexicographically smallest point, so that both orientations of the same
/// loop give the same result.
pub fn canonical_outline(outline: &[Point2]) -> Result<Vec<Point2>> {
    if outline.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::InvalidOutline("non-finite coordinates".into()));
    }
    let mut poly = polygon::dedup(outline, 1e-12);
    if poly.len() < 3 {
        return Err(Error::InvalidOutline("fewer than 3 distinct points".into()));
    }
    if polygon::signed_area(&poly).abs() < 1e-14 {
        return Err(Error::InvalidOutline("outline has no area".into()));
    }
    if !polygon::is_simple(&poly) {
        return Err(Error::InvalidOutline("outline intersects itself".into()));
    }
    if polygon::signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    let start = (0..poly.len())
        .min_by(|&a, &b| poly[a].x.total_cmp(&poly[b].x).then(poly[a].y.total_cmp(&poly[b].y)))
        .unwrap();
    poly.rotate_left(start);
    Ok(poly)
}

/// A planar one-sided triangulation with its boundary loop.
#[derive(Clone, Debug)]
pub struct PlanarMesh {
    pub mesh: TriangleMesh,
    /// Boundary vertices in counterclockwise order.
    pub boundary: Vec<usize>,
}

/// Quality triangulation of the outline region with at least `target_count`
/// faces and a minimum angle of 20 degrees where the outline allows it.
pub fn triangulate_outline(outline: &[Point2], target_count: usize) -> Result<PlanarMesh> {
    let poly = canonical_outline(outline)?;
    let area = polygon::signed_area(&poly);
    let target = target_count.max(1);
    let max_area = area / target as f64;
    // edge length of an equilateral triangle with the maximum area
    let h = (4.0 * max_area / 3f64.sqrt()).sqrt();

    let mut points: Vec<spade::Point2<f64>> = Vec::new();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let pieces = ((b - a).norm() / h).ceil().max(1.0) as usize;
        for k in 0..pieces {
            let p = a + (b - a) * (k as f64 / pieces as f64);
            points.push(spade::Point2::new(p.x, p.y));
        }
    }
    let n = points.len();
    let edges: Vec<[usize; 2]> = (0..n).map(|i| [i, (i + 1) % n]).collect();
    let mut cdt = ConstrainedDelaunayTriangulation::<spade::Point2<f64>>::bulk_load_cdt(points, edges)
        .map_err(|e| Error::InvalidOutline(format!("triangulation failed: {e:?}")))?;
    let params = RefinementParameters::<f64>::new()
        .with_angle_limit(AngleLimit::from_deg(20.0))
        .with_max_allowed_area(max_area)
        .exclude_outer_faces(true)
        .keep_constraint_edges()
        .with_max_additional_vertices(20 * target + 10 * n + 1000);
    let result = cdt.refine(params);
    let excluded: std::collections::BTreeSet<usize> = result.excluded_faces.iter().map(|f| f.index()).collect();

    let mut index = BTreeMap::new();
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for face in cdt.inner_faces() {
        if excluded.contains(&face.fix().index()) {
            continue;
        }
        let mut tri = [0usize; 3];
        for (k, v) in face.vertices().iter().enumerate() {
            let key = v.fix().index();
            tri[k] = *index.entry(key).or_insert_with(|| {
                let p = v.position();
                positions.push(Point3::new(p.x, p.y, 0.0));
                positions.len() - 1
            });
        }
        faces.push(tri);
    }
    if faces.is_empty() {
        return Err(Error::InvalidOutline("triangulation produced no interior faces".into()));
    }
    let mesh = TriangleMesh::new(positions, faces)?;
    let boundary = boundary_loop(&mesh)?;
    Ok(PlanarMesh { mesh, boundary })
}

/// The single boundary loop of a disk mesh, in face orientation order.
pub(crate) fn boundary_loop(mesh: &TriangleMesh) -> Result<Vec<usize>> {
    let mut next = BTreeMap::new();
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let e = mesh.edge_index(a, b).unwrap();
            if mesh.edge_faces(e).len() == 1 && next.insert(a, b).is_some() {
                return Err(Error::NonDiskTopology("boundary vertex visited twice".into()));
            }
        }
    }
    let Some((&start, _)) = next.iter().next() else {
        return Err(Error::NonDiskTopology("mesh has no boundary".into()));
    };
    let mut lp = vec![start];
    let mut cur = next[&start];
    while cur != start {
        lp.push(cur);
        cur = *next
            .get(&cur)
            .ok_or_else(|| Error::NonDiskTopology("open boundary chain".into()))?;
        if lp.len() > next.len() {
            return Err(Error::NonDiskTopology("boundary does not close".into()));
        }
    }
    if lp.len() != next.len() {
        return Err(Error::NonDiskTopology("more than one boundary loop".into()));
    }
    if mesh.euler_characteristic() != 1 {
        return Err(Error::NonDiskTopology(format!(
            "euler characteristic {} (expected 1)",
            mesh.euler_characteristic()
        )));
    }
    Ok(lp)
}

/// Splits interior edges whose endpoints both lie on the boundary, so that
/// doubling the mesh along its boundary stays manifold.
fn split_chords(positions: &mut Vec<Point3>, faces: &mut Vec<[usize; 3]>, on_boundary: &mut Vec<bool>) {
    loop {
        let mut count: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                count.entry([a.min(b), a.max(b)]).or_default().push(fi);
            }
        }
        let chord = count.iter().find(|(e, fs)| fs.len() == 2 && on_boundary[e[0]] && on_boundary[e[1]]);
        let Some((&[a, b], fs)) = chord else {
            return;
        };
        let fs = fs.clone();
        let m = positions.len();
        positions.push((positions[a] + positions[b]) * 0.5);
        on_boundary.push(false);
        for fi in fs {
            let f = faces[fi];
            let k = (0..3).find(|&k| {
                let (x, y) = (f[k], f[(k + 1) % 3]);
                (x == a && y == b) || (x == b && y == a)
            });
            let k = k.unwrap();
            let (x, y, z) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            faces[fi] = [x, m, z];
            faces.push([m, y, z]);
        }
    }
}

/// Doubles a planar disk mesh into a closed symmetric mesh.
///
/// Front faces keep their orientation, back faces are mirrored copies with
/// reversed winding. Boundary vertices become the midline and are pinned to
/// their own projections.
pub fn mirror_and_stitch(half: &TriangleMesh, plane: &Plane, thickness: f64) -> Result<SymmetricPartMesh> {
    if half.positions().iter().any(|p| plane.signed_distance(p).abs() > 1e-9) {
        return Err(Error::InvalidMesh("half mesh must lie in the symmetry plane".into()));
    }
    let lp = boundary_loop(half)?;
    let mut on_boundary = vec![false; half.vertex_count()];
    for &v in &lp {
        on_boundary[v] = true;
    }
    let mut positions = half.positions().to_vec();
    let mut faces = half.faces().to_vec();
    split_chords(&mut positions, &mut faces, &mut on_boundary);

    let n = positions.len();
    let mut copy = vec![usize::MAX; n];
    let mut pairs = Vec::new();
    for v in 0..n {
        if on_boundary[v] {
            copy[v] = v;
        } else {
            copy[v] = positions.len();
            pairs.push((v, positions.len()));
            let p = plane.reflect(&positions[v]);
            positions.push(p);
        }
    }
    let front = faces.len();
    for fi in 0..front {
        let f = faces[fi];
        faces.push([copy[f[0]], copy[f[2]], copy[f[1]]]);
    }
    let mesh = TriangleMesh::new(positions, faces)?;
    if !mesh.is_closed() || !mesh.is_oriented_manifold() {
        return Err(Error::InvalidMesh("stitched mesh is not a closed manifold".into()));
    }
    let mut part = SymmetricPartMesh::new(mesh, *plane, pairs, lp.clone(), thickness)?;
    let pins = lp
        .iter()
        .map(|&v| ProjectionConstraint {
            vertex: v,
            target: project(&part.mesh.positions()[v]),
            kind: ConstraintKind::Outline,
        })
        .collect();
    part.constraints = pins;
    Ok(part)
}

/// Triangulates and doubles the outline of `ann` into the initial part.
pub fn build_part(ann: &AnnotationSet, target_count: usize) -> Result<SymmetricPartMesh> {
    ann.validate()?;
    let planar = triangulate_outline(&ann.outline, target_count)?;
    mirror_and_stitch(&planar.mesh, &Plane::drawing(), ann.thickness)
}

/// Mean direction of a set of undirected 2D segments, signs aligned with the
/// first one.
fn mean_direction(segments: &[[Point2; 2]]) -> Option<Point2> {
    let mut acc = Point2::zeros();
    let mut reference: Option<Point2> = None;
    for s in segments {
        let d = s[1] - s[0];
        let len = d.norm();
        if len < 1e-12 {
            continue;
        }
        let mut u = d / len;
        match reference {
            None => reference = Some(u),
            Some(r) if r.dot(&u) < 0.0 => u = -u,
            _ => {}
        }
        acc += u;
    }
    let len = acc.norm();
    (len > 1e-12).then(|| acc / len)
}

/// Infers the rotation axis (angle zero) from landmark pairs, falling back to
/// the rotation segment direction.
pub fn infer_rotation_axis(
    landmarks: &[[Point2; 2]],
    segment: Option<&[Point2; 2]>,
    outline: &[Point2],
) -> Result<RotationSpec> {
    let dir = mean_direction(landmarks)
        .or_else(|| segment.and_then(|s| mean_direction(std::slice::from_ref(s))))
        .ok_or(Error::NoRotationCue)?;
    let c = polygon::centroid(&canonical_outline(outline)?);
    Ok(RotationSpec {
        axis: Point3::new(-dir.y, dir.x, 0.0),
        point: Point3::new(c.x, c.y, 0.0),
        angle: 0.0,
    })
}

/// Rotation angle encoded by a segment relative to the projected normal
/// direction `pn`.
pub fn angle_from_segment(segment: &[Point2; 2], reference_length: f64, pn: &Point2) -> f64 {
    let d = segment[1] - segment[0];
    let len = d.norm();
    if len == 0.0 || reference_length <= 0.0 {
        return 0.0;
    }
    let theta = (len / reference_length).clamp(0.0, 80f64.to_radians().sin()).asin();
    if d.dot(pn) < 0.0 {
        -theta
    } else {
        theta
    }
}

/// Extent of the outline along `dir`.
pub fn extent_along(outline: &[Point2], dir: &Point2) -> f64 {
    let proj = outline.iter().map(|p| p.dot(dir));
    let (lo, hi) = proj.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    hi - lo
}

/// Full rotation implied by the annotations: axis from landmarks or the
/// rotation segment, angle from the rotation segment.
pub fn rotation_from_annotations(ann: &AnnotationSet) -> Result<RotationSpec> {
    let mut spec = infer_rotation_axis(&ann.landmarks, ann.rotation.as_ref(), &ann.outline)?;
    if let Some(seg) = &ann.rotation {
        let pn = Point2::new(spec.axis.y, -spec.axis.x);
        let reference = extent_along(&ann.outline, &pn);
        spec.angle = angle_from_segment(seg, reference, &pn);
    }
    Ok(spec)
}

/// Rigidly rotates the part and its symmetry plane.
pub fn rotate_symmetry_plane(part: &SymmetricPartMesh, spec: &RotationSpec) -> SymmetricPartMesh {
    let mut out = part.clone();
    if spec.angle == 0.0 {
        return out;
    }
    let positions = part
        .mesh
        .positions()
        .iter()
        .map(|p| rotate_about(p, &spec.axis, spec.angle, &spec.point))
        .collect();
    out.mesh.set_positions(positions);
    out.plane = part.plane.rotated(&spec.axis, spec.angle, &spec.point);
    out
}

/// Outline matching parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub samples: usize,
    /// Emission standard deviation as a fraction of the outline's bounding
    /// box diagonal.
    pub sigma: f64,
    /// When there are fewer candidates than samples, the outline is
    /// subsampled to this fraction of the candidate count.
    pub candidate_fraction: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            sigma: 0.02,
            candidate_fraction: 1.0,
        }
    }
}

/// Vertices on the occluding contour seen along the view direction: ends of
/// edges whose two faces face opposite ways in projection.
pub fn silhouette_candidates(part: &SymmetricPartMesh) -> Vec<usize> {
    let mesh = &part.mesh;
    let facing: Vec<bool> = (0..mesh.face_count()).map(|f| mesh.face_cross(f).z > 0.0).collect();
    let mut out = std::collections::BTreeSet::new();
    for (e, edge) in mesh.edges().iter().enumerate() {
        let fs = mesh.edge_faces(e);
        if fs.len() == 2 && facing[fs[0]] != facing[fs[1]] {
            out.insert(edge[0]);
            out.insert(edge[1]);
        }
    }
    out.into_iter().collect()
}

/// Order-preserving assignment of outline samples to silhouette vertices.
///
/// Each sample gets a distinct candidate; candidate indices increase
/// cyclically along the outline. The assignment maximizes the likelihood of
/// a cyclic hidden Markov model with Gaussian emissions on projected distance
/// and uniform forward transitions, found by Viterbi over every start state.
pub fn match_outline_hmm(part: &SymmetricPartMesh, outline: &[Point2], cfg: &MatchConfig) -> Result<Vec<ProjectionConstraint>> {
    let poly = canonical_outline(outline)?;
    let mut cands = silhouette_candidates(part);
    if cands.is_empty() {
        return Err(Error::InvalidMesh("part has no silhouette".into()));
    }
    let p = part.mesh.positions();
    let mut keyed: Vec<(f64, usize)> = cands
        .iter()
        .map(|&v| (polygon::closest_point(&poly, &project(&p[v])).1, v))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cands = keyed.into_iter().map(|(_, v)| v).collect();

    let n = if cfg.samples <= cands.len() {
        cfg.samples
    } else {
        ((cands.len() as f64 * cfg.candidate_fraction.clamp(0.0, 1.0)) as usize).max(3.min(cands.len()))
    };
    let samples = polygon::resample(&poly, n, true);
    let (lo, hi) = polygon::bounds(&poly);
    let sigma = cfg.sigma * (hi - lo).norm();
    let proj: Vec<Point2> = cands.iter().map(|&v| project(&p[v])).collect();
    let emission = |i: usize, j: usize| (proj[j] - samples[i]).norm_squared() / (2.0 * sigma * sigma);
    let assignment = cyclic_monotone_assignment(n, cands.len(), emission);
    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(i, j)| ProjectionConstraint {
            vertex: cands[j],
            target: samples[i],
            kind: ConstraintKind::Outline,
        })
        .collect())
}

/// Minimum-cost map of `n` cyclic samples to `k ≥ n` cyclic states, strictly
/// increasing modulo `k`. Ties go to the smallest start state and then to the
/// smallest state index.
pub fn cyclic_monotone_assignment(n: usize, k: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    assert!(n <= k && n > 0);
    let table: Vec<Vec<f64>> = (0..n).map(|i| (0..k).map(|j| cost(i, j)).collect()).collect();
    let mut best = (f64::INFINITY, Vec::new());
    let mut dp = vec![vec![f64::INFINITY; k]; n];
    let mut arg = vec![vec![usize::MAX; k]; n];
    for start in 0..k {
        // offsets t relative to start; sample i may use t in [i, k - n + i]
        for row in dp.iter_mut() {
            row.fill(f64::INFINITY);
        }
        dp[0][0] = table[0][start];
        for i in 1..n {
            let (prev, cur) = dp.split_at_mut(i);
            let prev = &prev[i - 1];
            let cur = &mut cur[0];
            let mut run = (f64::INFINITY, usize::MAX);
            for t in i..=(k - n + i) {
                if prev[t - 1] < run.0 {
                    run = (prev[t - 1], t - 1);
                }
                if run.0.is_finite() {
                    cur[t] = run.0 + table[i][(start + t) % k];
                    arg[i][t] = run.1;
                }
            }
        }
        let last = &dp[n - 1];
        let mut end = (f64::INFINITY, usize::MAX);
        for (t, &v) in last.iter().enumerate() {
            if v < end.0 {
                end = (v, t);
            }
        }
        if end.0 < best.0 {
            let mut path = vec![0usize; n];
            let mut t = end.1;
            for i in (0..n).rev() {
                path[i] = (start + t) % k;
                if i > 0 {
                    t = arg[i][t];
                }
            }
            best = (end.0, path);
        }
    }
    best.1
}
