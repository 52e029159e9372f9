//! Symmetric Laplacian shape optimization: alternating scalar-field and
//! position solves, landmark pairs and midline edits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    graph_laplacian, polygon, project, vertex_area_normal, Bvh, ConstraintKind, Plane, Point2, Point3,
    ProjectionConstraint, SymmetricPartMesh, TriangleMesh,
};
use crate::linalg::{LeastSquares, NormalFactor, VariableMap};
use crate::part_builder::{
    build_part, canonical_outline, match_outline_hmm, rotate_symmetry_plane, rotation_from_annotations, AnnotationSet,
    MatchConfig, RotationSpec,
};

/// Coefficients of the position energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub alpha_e: f64,
    pub alpha_s: f64,
    pub alpha_m: f64,
    pub alpha_p: f64,
    /// Fixed curvature weight; when absent it is `k·#edges/#constraints`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_c: Option<f64>,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            alpha_e: 1.0,
            alpha_s: 1000.0,
            alpha_m: 1000.0,
            alpha_p: 1000.0,
            alpha_c: None,
        }
    }
}

impl EnergyWeights {
    pub fn alpha_c(&self, part: &SymmetricPartMesh) -> f64 {
        self.alpha_c.unwrap_or_else(|| {
            part.thickness * part.mesh.edges().len() as f64 / part.constraints.len().max(1) as f64
        })
    }
}

/// How the symmetry and midline terms enter the position solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryMode {
    /// Back vertices are reflections of front unknowns and midline vertices
    /// are parameterized in the plane, so both terms vanish identically.
    #[default]
    Exact,
    /// Both terms are weighted penalty rows.
    Penalty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub weights: EnergyWeights,
    pub iterations: usize,
    pub symmetry: SymmetryMode,
    /// Curvature bias on interior vertices of a flat part, as a fraction of
    /// the mean edge length.
    pub seed_bias: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            weights: EnergyWeights::default(),
            iterations: 5,
            symmetry: SymmetryMode::Exact,
            seed_bias: 0.05,
        }
    }
}

/// Smoothed per-vertex Laplacian magnitudes `c` and edge lengths `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetFields {
    pub c: Vec<f64>,
    pub e: Vec<f64>,
}

/// Vertex areas divided by their mean, with unit normals.
pub fn normalized_area_normals(mesh: &TriangleMesh) -> Result<Vec<(f64, Point3)>> {
    let mut an = vertex_area_normal(mesh)?;
    let mean = an.iter().map(|(a, _)| a).sum::<f64>() / an.len().max(1) as f64;
    if mean > 0.0 {
        for (a, _) in an.iter_mut() {
            *a /= mean;
        }
    }
    Ok(an)
}

/// Current signed Laplacian magnitudes (per normalized area) and mean
/// incident edge lengths.
pub fn current_fields(mesh: &TriangleMesh) -> Result<(Vec<f64>, Vec<f64>)> {
    let lap = graph_laplacian(mesh, mesh.positions())?;
    let an = normalized_area_normals(mesh)?;
    let c = lap.iter().zip(&an).map(|(l, (a, n))| l.dot(n) / a).collect();
    let p = mesh.positions();
    let e = (0..mesh.vertex_count())
        .map(|i| {
            let nb = mesh.neighbors(i);
            nb.iter().map(|&j| (p[i] - p[j]).norm()).sum::<f64>() / nb.len() as f64
        })
        .collect();
    Ok((c, e))
}

/// Prefactorized `LᵀL + I` for smoothing scalar fields on a fixed mesh.
#[derive(Debug)]
pub struct FieldSmoother {
    ls: LeastSquares,
    factor: NormalFactor,
}

impl FieldSmoother {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        let n = mesh.vertex_count();
        let mut ls = LeastSquares::new(VariableMap::identity(n));
        for i in 0..n {
            let nb = mesh.neighbors(i);
            if nb.is_empty() {
                return Err(Error::IsolatedVertex(i));
            }
            let w = -1.0 / nb.len() as f64;
            let mut row = vec![(i, 1.0)];
            row.extend(nb.iter().map(|&j| (j, w)));
            ls.push(&row, 1.0);
        }
        for i in 0..n {
            ls.push(&[(i, 1.0)], 1.0);
        }
        let factor = ls.factorize()?;
        Ok(Self { ls, factor })
    }

    /// Minimizer of `Σ‖L(x)‖² + Σ(x − target)²`.
    pub fn smooth(&self, target: &[f64]) -> Vec<f64> {
        let n = target.len();
        let mut b = vec![0.0; 2 * n];
        b[n..].copy_from_slice(target);
        self.ls.solve(&self.factor, &b)
    }
}

fn is_flat(part: &SymmetricPartMesh) -> bool {
    let diag = crate::geometry::bbox_diagonal(part.mesh.positions()).max(1e-300);
    part.mesh
        .positions()
        .iter()
        .all(|p| part.plane.signed_distance(p).abs() <= 1e-9 * diag)
}

/// Smoothed target fields from the current shape. A flat part gets a small
/// positive curvature bias on its non-midline vertices.
pub fn solve_scalar_fields(part: &SymmetricPartMesh, seed_bias: f64) -> Result<TargetFields> {
    solve_scalar_fields_with(part, &FieldSmoother::new(&part.mesh)?, seed_bias)
}

pub fn solve_scalar_fields_with(part: &SymmetricPartMesh, smoother: &FieldSmoother, seed_bias: f64) -> Result<TargetFields> {
    let (mut c, e) = current_fields(&part.mesh)?;
    if seed_bias > 0.0 && is_flat(part) {
        let eps = seed_bias * part.mesh.mean_edge_length();
        for (v, ci) in c.iter_mut().enumerate() {
            if !part.is_midline(v) {
                *ci += eps;
            }
        }
    }
    Ok(TargetFields {
        c: smoother.smooth(&c),
        e: smoother.smooth(&e),
    })
}

/// Per-vertex Laplacian targets `δ` and per-edge difference targets `η`
/// frozen at the positions they were computed from.
#[derive(Clone, Debug)]
pub struct PositionTargets {
    pub delta: Vec<Point3>,
    pub eta: Vec<Point3>,
}

impl PositionTargets {
    pub fn new(mesh: &TriangleMesh, fields: &TargetFields) -> Result<Self> {
        let an = normalized_area_normals(mesh)?;
        let delta = an.iter().zip(&fields.c).map(|((a, n), c)| n * (a * c)).collect();
        let p = mesh.positions();
        let eta = mesh
            .edges()
            .iter()
            .map(|&[i, j]| {
                let d = p[i] - p[j];
                let len = d.norm();
                let dir = if len > 0.0 { d / len } else { Point3::zeros() };
                dir * ((fields.e[i] + fields.e[j]) * 0.5)
            })
            .collect();
        Ok(Self { delta, eta })
    }
}

/// Value of each term of the position energy (unweighted) and the weighted
/// total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub curvature: f64,
    pub edges: f64,
    pub symmetry: f64,
    pub midline: f64,
    pub projection: f64,
    pub total: f64,
}

pub fn energy(part: &SymmetricPartMesh, positions: &[Point3], targets: &PositionTargets, w: &EnergyWeights) -> Result<EnergyBreakdown> {
    let mesh = &part.mesh;
    let mut lap_mesh = mesh.clone();
    lap_mesh.set_positions(positions.to_vec());
    let lap = graph_laplacian(&lap_mesh, positions)?;
    let curvature = lap.iter().zip(&targets.delta).map(|(l, d)| (l - d).norm_squared()).sum();
    let edges = mesh
        .edges()
        .iter()
        .zip(&targets.eta)
        .map(|(&[i, j], eta)| (positions[i] - positions[j] - eta).norm_squared())
        .sum();
    let (n, d) = (part.plane.normal, part.plane.offset);
    let symmetry = part
        .pairs
        .iter()
        .map(|&(i, j)| {
            let mid = n.dot(&((positions[i] + positions[j]) * 0.5)) + d;
            mid * mid + n.cross(&(positions[i] - positions[j])).norm_squared()
        })
        .sum();
    let midline = part.midline.iter().map(|&i| (n.dot(&positions[i]) + d).powi(2)).sum();
    let projection = part
        .constraints
        .iter()
        .map(|c| (project(&positions[c.vertex]) - c.target).norm_squared())
        .sum();
    let mut out = EnergyBreakdown {
        curvature,
        edges,
        symmetry,
        midline,
        projection,
        total: 0.0,
    };
    out.total = w.alpha_c(part) * curvature
        + w.alpha_e * edges
        + w.alpha_s * symmetry
        + w.alpha_m * midline
        + w.alpha_p * projection;
    Ok(out)
}

/// Position least-squares system for a fixed plane, constraint index set and
/// weights. Only right-hand sides change between solves, so the normal
/// matrix is factorized once.
#[derive(Debug)]
pub struct PositionSolver {
    ls: LeastSquares,
    factor: NormalFactor,
    /// Per-row fixed target, `None` for curvature and edge rows.
    fixed: Vec<f64>,
    vertices: usize,
    edges: usize,
}

impl PositionSolver {
    pub fn new(part: &SymmetricPartMesh, w: &EnergyWeights, mode: SymmetryMode) -> Result<Self> {
        if part.constraints.is_empty() {
            return Err(Error::Unanchored);
        }
        let mesh = &part.mesh;
        let nv = mesh.vertex_count();
        let map = match mode {
            SymmetryMode::Penalty => VariableMap::identity(3 * nv),
            SymmetryMode::Exact => symmetric_map(part),
        };
        let mut ls = LeastSquares::new(map);
        let mut fixed = Vec::new();
        let alpha_c = w.alpha_c(part);
        for i in 0..nv {
            let nb = mesh.neighbors(i);
            if nb.is_empty() {
                return Err(Error::IsolatedVertex(i));
            }
            let inv = -1.0 / nb.len() as f64;
            for k in 0..3 {
                let mut row = vec![(3 * i + k, 1.0)];
                row.extend(nb.iter().map(|&j| (3 * j + k, inv)));
                ls.push(&row, alpha_c);
                fixed.push(0.0);
            }
        }
        for &[i, j] in mesh.edges() {
            for k in 0..3 {
                ls.push(&[(3 * i + k, 1.0), (3 * j + k, -1.0)], w.alpha_e);
                fixed.push(0.0);
            }
        }
        let (n, d) = (part.plane.normal, part.plane.offset);
        if mode == SymmetryMode::Penalty {
            for &(i, j) in &part.pairs {
                let mut row = Vec::with_capacity(6);
                for k in 0..3 {
                    row.push((3 * i + k, 0.5 * n[k]));
                    row.push((3 * j + k, 0.5 * n[k]));
                }
                ls.push(&row, w.alpha_s);
                fixed.push(-d);
                // components of n × (v_i − v_j)
                for k in 0..3 {
                    let (a, b) = ((k + 1) % 3, (k + 2) % 3);
                    let row = [
                        (3 * i + b, n[a]),
                        (3 * j + b, -n[a]),
                        (3 * i + a, -n[b]),
                        (3 * j + a, n[b]),
                    ];
                    ls.push(&row, w.alpha_s);
                    fixed.push(0.0);
                }
            }
            for &i in &part.midline {
                ls.push(&[(3 * i, n.x), (3 * i + 1, n.y), (3 * i + 2, n.z)], w.alpha_m);
                fixed.push(-d);
            }
        }
        for c in &part.constraints {
            ls.push(&[(3 * c.vertex, 1.0)], w.alpha_p);
            fixed.push(c.target.x);
            ls.push(&[(3 * c.vertex + 1, 1.0)], w.alpha_p);
            fixed.push(c.target.y);
        }
        let factor = ls.factorize()?;
        Ok(Self {
            ls,
            factor,
            fixed,
            vertices: nv,
            edges: mesh.edges().len(),
        })
    }

    fn rhs(&self, targets: &PositionTargets) -> Vec<f64> {
        let mut b = self.fixed.clone();
        for (i, d) in targets.delta.iter().enumerate() {
            b[3 * i..3 * i + 3].copy_from_slice(d.as_slice());
        }
        let base = 3 * self.vertices;
        for (e, eta) in targets.eta.iter().enumerate().take(self.edges) {
            b[base + 3 * e..base + 3 * e + 3].copy_from_slice(eta.as_slice());
        }
        b
    }

    pub fn solve(&self, targets: &PositionTargets) -> Vec<Point3> {
        let x = self.ls.solve(&self.factor, &self.rhs(targets));
        x.chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect()
    }

    /// Relative normal-equation residual of the reduced unknowns.
    pub fn normal_residual(&self, reduced: &[f64], targets: &PositionTargets) -> f64 {
        self.ls.normal_residual(reduced, &self.rhs(targets))
    }

    /// Solves and also returns the reduced unknowns.
    pub fn solve_reduced(&self, targets: &PositionTargets) -> (Vec<Point3>, Vec<f64>) {
        let y = self.factor.solve(&self.ls.normal_rhs(&self.rhs(targets)));
        let x = self.ls.map().expand(&y);
        (x.chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect(), y)
    }
}

/// Front vertices own three unknowns, back vertices are their reflections
/// and midline vertices move in the plane.
fn symmetric_map(part: &SymmetricPartMesh) -> VariableMap {
    let nv = part.mesh.vertex_count();
    let plane = part.plane;
    let n = plane.normal;
    let (e1, e2) = plane.basis();
    let o = plane.origin();
    let reduced = 3 * part.pairs.len() + 2 * part.midline.len();
    let mut map = VariableMap::new(3 * nv, reduced);
    for (p, &(i, j)) in part.pairs.iter().enumerate() {
        let base = 3 * p;
        for k in 0..3 {
            map.set(3 * i + k, vec![(base + k, 1.0)], 0.0);
            // reflect(x) = (I − 2nnᵀ)x − 2dn
            let terms = (0..3)
                .map(|l| {
                    let delta = if k == l { 1.0 } else { 0.0 };
                    (base + l, delta - 2.0 * n[k] * n[l])
                })
                .filter(|t| t.1 != 0.0)
                .collect();
            map.set(3 * j + k, terms, -2.0 * plane.offset * n[k]);
        }
    }
    let mbase = 3 * part.pairs.len();
    for (q, &m) in part.midline.iter().enumerate() {
        for k in 0..3 {
            let terms = [(mbase + 2 * q, e1[k]), (mbase + 2 * q + 1, e2[k])]
                .into_iter()
                .filter(|t| t.1 != 0.0)
                .collect();
            map.set(3 * m + k, terms, o[k]);
        }
    }
    map
}

/// Per-iteration record of an optimization run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationReport {
    pub before: EnergyBreakdown,
    pub after: EnergyBreakdown,
}

/// Positions minimizing the position energy for fixed fields.
pub fn solve_positions(part: &SymmetricPartMesh, fields: &TargetFields, w: &EnergyWeights, mode: SymmetryMode) -> Result<Vec<Point3>> {
    let solver = PositionSolver::new(part, w, mode)?;
    Ok(solver.solve(&PositionTargets::new(&part.mesh, fields)?))
}

/// Alternates field smoothing and position solves.
pub fn optimize_part(part: &SymmetricPartMesh, cfg: &OptimizerConfig) -> Result<(SymmetricPartMesh, Vec<IterationReport>)> {
    let mut part = part.clone();
    let smoother = FieldSmoother::new(&part.mesh)?;
    let solver = PositionSolver::new(&part, &cfg.weights, cfg.symmetry)?;
    let mut reports = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let fields = solve_scalar_fields_with(&part, &smoother, cfg.seed_bias)?;
        let targets = PositionTargets::new(&part.mesh, &fields)?;
        let before = energy(&part, part.mesh.positions(), &targets, &cfg.weights)?;
        let positions = solver.solve(&targets);
        let after = energy(&part, &positions, &targets, &cfg.weights)?;
        part.mesh.set_positions(positions);
        reports.push(IterationReport { before, after });
    }
    Ok((part, reports))
}

/// Least-squares 3D positions of a landmark pair: symmetric about `plane`
/// and projecting onto the two annotated points.
pub fn solve_landmark_pair(p1: &Point2, p2: &Point2, plane: &Plane) -> Result<(Point3, Point3)> {
    let n = plane.normal;
    if (n.x * n.x + n.y * n.y).sqrt() < 1e-9 {
        return Err(Error::FrontalPlane);
    }
    // midpoint m and difference w decouple:
    //   (n·m + d)² + 2‖P(m) − s/2‖²  and  ‖n × w‖² + ½‖P(w) − t‖²
    let s = p1 + p2;
    let t = p1 - p2;
    let mx = 0.5 * s.x;
    let my = 0.5 * s.y;
    let mz = if n.z.abs() > 1e-12 {
        -(n.x * mx + n.y * my + plane.offset) / n.z
    } else {
        0.0
    };
    let m = Point3::new(mx, my, mz);
    let cross = nalgebra::Matrix3::new(0.0, -n.z, n.y, n.z, 0.0, -n.x, -n.y, n.x, 0.0);
    let mut a = nalgebra::DMatrix::<f64>::zeros(5, 3);
    a.view_mut((0, 0), (3, 3)).copy_from(&cross);
    let h = 0.5f64.sqrt();
    a[(3, 0)] = h;
    a[(4, 1)] = h;
    let b = nalgebra::DVector::from_vec(vec![0.0, 0.0, 0.0, h * t.x, h * t.y]);
    let svd = a.svd(true, true);
    let w = svd.solve(&b, 1e-12).map_err(|e| Error::SingularSystem(e.to_string()))?;
    let w = Point3::new(w[0], w[1], w[2]);
    Ok((m + w * 0.5, m - w * 0.5))
}

/// Solves a landmark pair and pins the closest symmetric vertex pair to its
/// projections. Candidates are ranked by combined 3D distance to the solved
/// points, then by combined projected distance, then by vertex index.
pub fn snap_landmark(part: &SymmetricPartMesh, p1: &Point2, p2: &Point2) -> Result<[ProjectionConstraint; 2]> {
    let (v1, v2) = solve_landmark_pair(p1, p2, &part.plane)?;
    let pos = part.mesh.positions();
    let mut best: Option<((f64, f64, usize), usize, usize)> = None;
    for &(i, j) in &part.pairs {
        for (a, b) in [(i, j), (j, i)] {
            let d3 = (pos[a] - v1).norm() + (pos[b] - v2).norm();
            let d2 = (project(&pos[a]) - p1).norm() + (project(&pos[b]) - p2).norm();
            let key = (d3, d2, a.min(b));
            if best.as_ref().is_none_or(|(k, _, _)| key.partial_cmp(k) == Some(std::cmp::Ordering::Less)) {
                best = Some((key, a, b));
            }
        }
    }
    let (_, a, b) = best.ok_or_else(|| Error::InvalidMesh("part has no symmetric pairs".into()))?;
    Ok([
        ProjectionConstraint {
            vertex: a,
            target: project(&v1),
            kind: ConstraintKind::Landmark,
        },
        ProjectionConstraint {
            vertex: b,
            target: project(&v2),
            kind: ConstraintKind::Landmark,
        },
    ])
}

/// Midline targets and any warnings raised while producing them.
#[derive(Clone, Debug, Default)]
pub struct MidlineUpdate {
    pub constraints: Vec<ProjectionConstraint>,
    pub warnings: Vec<String>,
}

/// Midline vertices not hidden behind other surface along the view
/// direction.
pub fn visible_midline(part: &SymmetricPartMesh) -> Vec<bool> {
    let mesh = &part.mesh;
    let bvh = Bvh::new(mesh.positions(), mesh.faces());
    let eps = 1e-6 * crate::geometry::bbox_diagonal(mesh.positions()).max(1e-300);
    part.midline
        .iter()
        .map(|&v| {
            let origin = mesh.positions()[v];
            let incident = mesh.vertex_faces(v);
            !bvh
                .ray_hits(&origin, &Point3::z())
                .iter()
                .any(|h| h.t > eps && !incident.contains(&h.face))
        })
        .collect()
}

/// Longest cyclic run of `true` in `flags`, as indices in loop order.
fn longest_run(flags: &[bool]) -> Vec<usize> {
    let n = flags.len();
    if flags.iter().all(|&f| f) {
        return (0..n).collect();
    }
    let start = flags.iter().position(|&f| !f).unwrap();
    let mut best: Vec<usize> = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    for k in 1..=n {
        let i = (start + k) % n;
        if flags[i] {
            cur.push(i);
        } else {
            if cur.len() > best.len() {
                best = std::mem::take(&mut cur);
            }
            cur.clear();
        }
    }
    if cur.len() > best.len() {
        best = cur;
    }
    best
}

/// Projection targets for visible midline vertices sampled from the edited
/// midline `m` by arc length. Targets outside `outline` are clamped onto it.
pub fn apply_midline(part: &SymmetricPartMesh, m: &[Point2], outline: Option<&[Point2]>) -> MidlineUpdate {
    let mut out = MidlineUpdate::default();
    let m = polygon::dedup(m, 1e-12);
    if m.len() < 2 || part.midline.is_empty() {
        return out;
    }
    let run = longest_run(&visible_midline(part));
    if run.len() < 2 {
        out.warnings.push("no visible midline vertices".into());
        return out;
    }
    let pos = part.mesh.positions();
    let verts: Vec<usize> = run.iter().map(|&k| part.midline[k]).collect();
    let proj: Vec<Point2> = verts.iter().map(|&v| project(&pos[v])).collect();
    let cum = polygon::arc_lengths(&proj, false);
    let total = *cum.last().unwrap();
    let mcum = polygon::arc_lengths(&m, false);
    let mtotal = *mcum.last().unwrap();
    let sample = |reverse: bool| -> Vec<Point2> {
        cum.iter()
            .map(|&s| {
                let u = if total > 0.0 { s / total } else { 0.0 };
                let u = if reverse { 1.0 - u } else { u };
                polygon::point_at(&m, &mcum, false, u * mtotal)
            })
            .collect()
    };
    let fwd = sample(false);
    let bwd = sample(true);
    let cost = |t: &[Point2]| t.iter().zip(&proj).map(|(a, b)| (a - b).norm_squared()).sum::<f64>();
    let mut targets = if cost(&bwd) < cost(&fwd) { bwd } else { fwd };
    if let Some(o) = outline {
        if o.len() >= 3 {
            let mut clamped = 0;
            for t in targets.iter_mut() {
                if !polygon::contains(o, t) {
                    *t = polygon::closest_point(o, t).0;
                    clamped += 1;
                }
            }
            if clamped > 0 {
                out.warnings
                    .push(format!("{clamped} midline targets fell outside the outline and were clamped"));
            }
        }
    }
    out.constraints = verts
        .into_iter()
        .zip(targets)
        .map(|(vertex, target)| ProjectionConstraint {
            vertex,
            target,
            kind: ConstraintKind::Midline,
        })
        .collect();
    out
}

/// Symmetry residuals: worst pair reflection error and worst midline plane
/// distance, both relative to the bounding box diagonal.
pub fn symmetry_residuals(part: &SymmetricPartMesh) -> (f64, f64) {
    let p = part.mesh.positions();
    let diag = crate::geometry::bbox_diagonal(p).max(1e-300);
    let pairs = part
        .pairs
        .iter()
        .map(|&(i, j)| (part.plane.reflect(&p[i]) - p[j]).norm())
        .fold(0.0, f64::max);
    let mid = part
        .midline
        .iter()
        .map(|&i| part.plane.signed_distance(&p[i]).abs())
        .fold(0.0, f64::max);
    (pairs / diag, mid / diag)
}

/// Largest distance between a constrained vertex's projection and its
/// target, relative to the bounding box diagonal.
pub fn projection_residual(part: &SymmetricPartMesh, kind: Option<ConstraintKind>) -> f64 {
    let p = part.mesh.positions();
    let diag = crate::geometry::bbox_diagonal(p).max(1e-300);
    part.constraints
        .iter()
        .filter(|c| kind.is_none_or(|k| c.kind == k))
        .map(|c| (project(&p[c.vertex]) - c.target).norm())
        .fold(0.0, f64::max)
        / diag
}

/// Settings for shaping one part from its annotations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeConfig {
    /// Target triangle count of one half.
    pub target_faces: usize,
    pub optimizer: OptimizerConfig,
    pub matching: MatchConfig,
    /// Outline match and refit rounds after rotation.
    pub match_rounds: usize,
    /// Refits after moving each outline target to the outline point closest
    /// to its vertex's projection.
    pub slide_rounds: usize,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            target_faces: 800,
            optimizer: OptimizerConfig::default(),
            matching: MatchConfig::default(),
            match_rounds: 1,
            slide_rounds: 1,
        }
    }
}

/// A shaped part and what happened on the way.
#[derive(Clone, Debug)]
pub struct ShapedPart {
    pub part: SymmetricPartMesh,
    pub rotation: RotationSpec,
    pub reports: Vec<IterationReport>,
    pub warnings: Vec<String>,
}

/// Builds, inflates, rotates and refits one part.
///
/// The flat stitched mesh is inflated with its rim pinned, rigidly rotated to
/// the annotated symmetry plane, matched against the outline, given landmark
/// and midline targets, and optimized again.
pub fn shape_part(ann: &AnnotationSet, cfg: &ShapeConfig) -> Result<ShapedPart> {
    shape_part_with(ann, cfg, None)
}

/// [`shape_part`] with the rotation given instead of read from the
/// annotations.
pub fn shape_part_with(ann: &AnnotationSet, cfg: &ShapeConfig, rotation: Option<RotationSpec>) -> Result<ShapedPart> {
    ann.validate()?;
    let part = build_part(ann, cfg.target_faces)?;
    let (part, mut reports) = optimize_part(&part, &cfg.optimizer)?;
    let mut warnings = Vec::new();
    let rotation = match rotation.map(Ok).unwrap_or_else(|| rotation_from_annotations(ann)) {
        Ok(r) => r,
        Err(Error::NoRotationCue) => RotationSpec::identity(),
        Err(e) => return Err(e),
    };
    if rotation.angle == 0.0 {
        if !ann.landmarks.is_empty() {
            warnings.push("landmarks need an oblique plane; they only set the rotation axis".into());
        }
        if ann.midline.is_some() {
            warnings.push("midline ignored for a frontal plane".into());
        }
        return Ok(ShapedPart {
            part,
            rotation,
            reports,
            warnings,
        });
    }
    let mut part = rotate_symmetry_plane(&part, &rotation);
    let outline = canonical_outline(&ann.outline)?;
    for round in 0..cfg.match_rounds.max(1) {
        let matched = match_outline_hmm(&part, &outline, &cfg.matching)?;
        part.replace_constraints(ConstraintKind::Outline, matched);
        let mut landmarks = Vec::new();
        for [p1, p2] in &ann.landmarks {
            landmarks.extend(snap_landmark(&part, p1, p2)?);
        }
        part.replace_constraints(ConstraintKind::Landmark, landmarks);
        if let Some(m) = &ann.midline {
            let update = apply_midline(&part, m, Some(&outline));
            if round == 0 {
                warnings.extend(update.warnings);
            }
            part.replace_constraints(ConstraintKind::Midline, update.constraints);
        }
        // a vertex may be claimed twice; the later kind wins
        dedup_constraints(&mut part.constraints);
        let (next, more) = optimize_part(&part, &cfg.optimizer)?;
        part = next;
        reports.extend(more);
    }
    for _ in 0..cfg.slide_rounds {
        slide_outline_targets(&mut part, &outline);
        let (next, more) = optimize_part(&part, &cfg.optimizer)?;
        part = next;
        reports.extend(more);
    }
    Ok(ShapedPart {
        part,
        rotation,
        reports,
        warnings,
    })
}

/// Moves outline targets along the outline to the point closest to the
/// current projection.
fn slide_outline_targets(part: &mut SymmetricPartMesh, outline: &[Point2]) {
    let p = part.mesh.positions().to_vec();
    for c in part.constraints.iter_mut().filter(|c| c.kind == ConstraintKind::Outline) {
        c.target = polygon::closest_point(outline, &project(&p[c.vertex])).0;
    }
}

fn dedup_constraints(constraints: &mut Vec<ProjectionConstraint>) {
    let mut last = std::collections::BTreeMap::new();
    for (i, c) in constraints.iter().enumerate() {
        last.insert(c.vertex, i);
    }
    let keep: std::collections::BTreeSet<usize> = last.into_values().collect();
    let mut i = 0;
    constraints.retain(|_| {
        i += 1;
        keep.contains(&(i - 1))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    fn circle(n: usize, r: f64) -> Vec<Point2> {
        (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                Point2::new(0.5 + r * t.cos(), 0.5 + r * t.sin())
            })
            .collect()
    }

    fn circle_part(k: f64, faces: usize) -> SymmetricPartMesh {
        let mut ann = AnnotationSet::new(circle(64, 0.3));
        ann.thickness = k;
        build_part(&ann, faces).unwrap()
    }

    fn max_abs_z(part: &SymmetricPartMesh) -> f64 {
        part.mesh.positions().iter().map(|p| p.z.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_fields_are_kept() {
        let m = crate::geometry::mesh::tests::icosahedron();
        let s = FieldSmoother::new(&m).unwrap();
        let out = s.smooth(&vec![2.5; m.vertex_count()]);
        assert!(out.iter().all(|x| (x - 2.5).abs() < 1e-12));
        let doubled = s.smooth(&vec![5.0; m.vertex_count()]);
        assert!(doubled.iter().zip(&out).all(|(a, b)| (a - 2.0 * b).abs() < 1e-12));
    }

    #[test]
    fn spike_matches_dense_oracle() {
        let m = crate::geometry::mesh::tests::grid(4, 4, 1.0);
        let n = m.vertex_count();
        let mut target = vec![0.0; n];
        target[12] = 1.0;
        let out = FieldSmoother::new(&m).unwrap().smooth(&target);
        let mut l = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            let nb = m.neighbors(i);
            for &j in nb {
                l[(i, j)] -= 1.0 / nb.len() as f64;
            }
        }
        let a = l.transpose() * &l + DMatrix::identity(n, n);
        let oracle = a.lu().solve(&DVector::from_vec(target.clone())).unwrap();
        for i in 0..n {
            assert!((out[i] - oracle[i]).abs() < 1e-12);
        }
        assert!(out[12] < 1.0 && out[12] > 0.0);
        for &j in m.neighbors(12) {
            assert!(out[j] > 0.0);
        }
    }

    #[test]
    fn flat_grid_is_a_fixed_point() {
        let mesh = crate::geometry::mesh::tests::grid(5, 5, 0.2);
        // a flat single-sided grid treated as an unpaired part
        let n = mesh.vertex_count();
        // every vertex on the midline breaks the loop invariant but is fine
        // for the solver
        let mut part = SymmetricPartMesh::new(mesh.clone(), Plane::drawing(), vec![], (0..n).collect(), 1.0).unwrap();
        let boundary: Vec<usize> = (0..n)
            .filter(|&v| {
                let p = mesh.positions()[v];
                p.x.abs() < 1e-12 || p.y.abs() < 1e-12 || (p.x - 1.0).abs() < 1e-12 || (p.y - 1.0).abs() < 1e-12
            })
            .collect();
        part.constraints = boundary
            .iter()
            .map(|&v| ProjectionConstraint {
                vertex: v,
                target: project(&mesh.positions()[v]),
                kind: ConstraintKind::Outline,
            })
            .collect();
        let targets = PositionTargets {
            delta: graph_laplacian(&mesh, mesh.positions()).unwrap(),
            eta: mesh
                .edges()
                .iter()
                .map(|&[i, j]| mesh.positions()[i] - mesh.positions()[j])
                .collect(),
        };
        for mode in [SymmetryMode::Exact, SymmetryMode::Penalty] {
            let solver = PositionSolver::new(&part, &EnergyWeights::default(), mode).unwrap();
            let out = solver.solve(&targets);
            for (a, b) in out.iter().zip(mesh.positions()) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn unanchored_is_an_error() {
        let mut part = circle_part(1.0, 200);
        part.constraints.clear();
        let err = PositionSolver::new(&part, &EnergyWeights::default(), SymmetryMode::Exact).unwrap_err();
        assert!(matches!(err, Error::Unanchored));
    }

    #[test]
    fn circle_inflates_symmetrically() {
        let part = circle_part(1.0, 1600);
        let (out, reports) = optimize_part(&part, &OptimizerConfig::default()).unwrap();
        assert!(max_abs_z(&out) > 0.0);
        let p = out.mesh.positions();
        for &(i, j) in &out.pairs {
            assert!((p[i].xy() - p[j].xy()).norm() < 1e-6);
            assert!((p[i].z + p[j].z).abs() < 1e-6);
        }
        for r in &reports {
            assert!(r.after.total <= r.before.total * (1.0 + 1e-9));
        }
        assert_eq!(out.mesh.faces(), part.mesh.faces());
    }

    #[test]
    fn thickness_controls_depth() {
        let cfg = OptimizerConfig::default();
        let thin = optimize_part(&circle_part(0.1, 800), &cfg).unwrap().0;
        let thick = optimize_part(&circle_part(1.0, 800), &cfg).unwrap().0;
        assert!(max_abs_z(&thin) < max_abs_z(&thick), "{} vs {}", max_abs_z(&thin), max_abs_z(&thick));
    }

    #[test]
    fn one_more_iteration_changes_little() {
        let part = circle_part(1.0, 800);
        let mut cfg = OptimizerConfig::default();
        let (five, r5) = optimize_part(&part, &cfg).unwrap();
        cfg.iterations = 1;
        let (_, r6) = optimize_part(&five, &cfg).unwrap();
        let (e5, e6) = (r5.last().unwrap().after.total, r6[0].after.total);
        assert!(((e6 - e5) / e5).abs() < 0.01, "{e5} -> {e6}");
    }

    #[test]
    fn normal_equations_are_satisfied() {
        let part = circle_part(1.0, 400);
        for mode in [SymmetryMode::Exact, SymmetryMode::Penalty] {
            let solver = PositionSolver::new(&part, &EnergyWeights::default(), mode).unwrap();
            let fields = solve_scalar_fields(&part, 0.05).unwrap();
            let targets = PositionTargets::new(&part.mesh, &fields).unwrap();
            let (_, y) = solver.solve_reduced(&targets);
            assert!(solver.normal_residual(&y, &targets) < 1e-8);
        }
    }

    fn dense_landmark(p1: &Point2, p2: &Point2, plane: &Plane) -> (Point3, Point3) {
        let n = plane.normal;
        let mut a = DMatrix::<f64>::zeros(8, 6);
        let mut b = DVector::<f64>::zeros(8);
        for k in 0..3 {
            a[(0, k)] = 0.5 * n[k];
            a[(0, 3 + k)] = 0.5 * n[k];
        }
        b[0] = -plane.offset;
        let cross = nalgebra::Matrix3::new(0.0, -n.z, n.y, n.z, 0.0, -n.x, -n.y, n.x, 0.0);
        for r in 0..3 {
            for c in 0..3 {
                a[(1 + r, c)] = cross[(r, c)];
                a[(1 + r, 3 + c)] = -cross[(r, c)];
            }
        }
        a[(4, 0)] = 1.0;
        a[(5, 1)] = 1.0;
        a[(6, 3)] = 1.0;
        a[(7, 4)] = 1.0;
        b[4] = p1.x;
        b[5] = p1.y;
        b[6] = p2.x;
        b[7] = p2.y;
        let x = a.svd(true, true).solve(&b, 1e-12).unwrap();
        (Point3::new(x[0], x[1], x[2]), Point3::new(x[3], x[4], x[5]))
    }

    #[test]
    fn landmark_examples() {
        let plane = Plane::from_coefficients(1.0, 0.0, 0.0, 0.0);
        let (a, b) = solve_landmark_pair(&Point2::new(-1., 0.), &Point2::new(1., 0.), &plane).unwrap();
        assert!((a - Point3::new(-1., 0., 0.)).norm() < 1e-12);
        assert!((b - Point3::new(1., 0., 0.)).norm() < 1e-12);

        let tilted = Plane::drawing().rotated(&Point3::y(), 30f64.to_radians(), &Point3::zeros());
        let (a, b) = solve_landmark_pair(&Point2::new(-0.3, 0.2), &Point2::new(0.3, 0.2), &tilted).unwrap();
        assert!((tilted.reflect(&a) - b).norm() < 1e-9);
        assert!((a.xy() - Point2::new(-0.3, 0.2)).norm() < 1e-9);
        assert!((b.xy() - Point2::new(0.3, 0.2)).norm() < 1e-9);
        let (oa, ob) = dense_landmark(&Point2::new(-0.3, 0.2), &Point2::new(0.3, 0.2), &tilted);
        assert!((a - oa).norm() < 1e-9 && (b - ob).norm() < 1e-9);

        assert!(matches!(
            solve_landmark_pair(&Point2::zeros(), &Point2::x(), &Plane::drawing()),
            Err(Error::FrontalPlane)
        ));
    }

    #[test]
    fn inconsistent_landmarks_split_residual_evenly() {
        let tilted = Plane::drawing().rotated(&Point3::y(), 30f64.to_radians(), &Point3::zeros());
        let p1 = Point2::new(-0.3, 0.15);
        let p2 = Point2::new(0.3, 0.25);
        let (a, b) = solve_landmark_pair(&p1, &p2, &tilted).unwrap();
        let r1 = (a.xy() - p1).norm();
        let r2 = (b.xy() - p2).norm();
        assert!(r1 > 0.0);
        assert!((r1 - r2).abs() < 1e-12);
        // the midpoint lies on the plane
        assert!(tilted.signed_distance(&((a + b) * 0.5)).abs() < 1e-12);
        let (oa, ob) = dense_landmark(&p1, &p2, &tilted);
        assert!((a - oa).norm() < 1e-9 && (b - ob).norm() < 1e-9);
    }

    #[test]
    fn landmark_oracle_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.2..1.0));
            let plane = Plane::through(&Point3::new(rng.gen(), rng.gen(), rng.gen()), &n);
            let p1 = Point2::new(rng.gen(), rng.gen());
            let p2 = Point2::new(rng.gen(), rng.gen());
            let (a, b) = solve_landmark_pair(&p1, &p2, &plane).unwrap();
            let (oa, ob) = dense_landmark(&p1, &p2, &plane);
            assert!((a - oa).norm() < 1e-9 && (b - ob).norm() < 1e-9);
        }
    }

    fn oblique_ellipse(theta_deg: f64) -> AnnotationSet {
        let outline = (0..48)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / 48.0;
                Point2::new(0.5 + 0.35 * t.cos(), 0.5 + 0.22 * t.sin())
            })
            .collect();
        let mut ann = AnnotationSet::new(outline);
        let len = theta_deg.to_radians().sin() * 0.44;
        ann.rotation = Some([Point2::new(0.5, 0.5), Point2::new(0.5, 0.5 + len)]);
        ann
    }

    /// Turned about the vertical axis, so the midline runs top to bottom.
    fn turned_ellipse(theta_deg: f64) -> AnnotationSet {
        let outline = (0..48)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / 48.0;
                Point2::new(0.5 + 0.22 * t.cos(), 0.5 + 0.35 * t.sin())
            })
            .collect();
        let mut ann = AnnotationSet::new(outline);
        let len = theta_deg.to_radians().sin() * 0.44;
        ann.rotation = Some([Point2::new(0.5, 0.5), Point2::new(0.5 + len, 0.5)]);
        ann
    }

    #[test]
    fn oblique_part_is_exactly_symmetric() {
        let shaped = shape_part(&oblique_ellipse(30.0), &ShapeConfig::default()).unwrap();
        assert!((shaped.rotation.angle.abs() - 30f64.to_radians()).abs() < 1e-9);
        let (pairs, mid) = symmetry_residuals(&shaped.part);
        assert!(pairs < 1e-5 && mid < 1e-5, "{pairs} {mid}");
        assert!(projection_residual(&shaped.part, Some(ConstraintKind::Outline)) < 1e-3);
        shaped.part.validate().unwrap();
    }

    #[test]
    fn penalty_mode_is_only_approximately_symmetric() {
        let mut cfg = ShapeConfig::default();
        cfg.optimizer.symmetry = SymmetryMode::Penalty;
        let shaped = shape_part(&oblique_ellipse(30.0), &cfg).unwrap();
        let (pairs, mid) = symmetry_residuals(&shaped.part);
        assert!(pairs < 1e-3 && mid < 1e-3, "{pairs} {mid}");
    }

    fn visible_midline_projection(part: &SymmetricPartMesh) -> (Vec<usize>, Vec<Point2>) {
        let run = longest_run(&visible_midline(part));
        let verts: Vec<usize> = run.iter().map(|&k| part.midline[k]).collect();
        let proj = verts.iter().map(|&v| project(&part.mesh.positions()[v])).collect();
        (verts, proj)
    }

    #[test]
    fn current_midline_is_a_fixed_point() {
        let part = shape_part(&oblique_ellipse(30.0), &ShapeConfig::default()).unwrap().part;
        let (verts, proj) = visible_midline_projection(&part);
        assert!(verts.len() > 3);
        let update = apply_midline(&part, &proj, None);
        assert!(update.warnings.is_empty());
        assert_eq!(update.constraints.len(), verts.len());
        for c in &update.constraints {
            assert!((project(&part.mesh.positions()[c.vertex]) - c.target).norm() < 1e-6);
        }
    }

    #[test]
    fn shifted_midline_pulls_the_profile() {
        let ann = turned_ellipse(30.0);
        let part = shape_part(&ann, &ShapeConfig::default()).unwrap().part;
        let (_, proj) = visible_midline_projection(&part);
        let shift = Point2::new(0.05, 0.0);
        let m: Vec<Point2> = proj.iter().map(|p| p + shift).collect();
        let mut edited = part.clone();
        let update = apply_midline(&edited, &m, Some(&ann.outline));
        edited.replace_constraints(ConstraintKind::Midline, update.constraints.clone());
        dedup_constraints(&mut edited.constraints);
        let before: f64 = update
            .constraints
            .iter()
            .map(|c| (project(&part.mesh.positions()[c.vertex]) - c.target).norm())
            .sum();
        let (out, _) = optimize_part(&edited, &OptimizerConfig::default()).unwrap();
        let after: f64 = update
            .constraints
            .iter()
            .map(|c| (project(&out.mesh.positions()[c.vertex]) - c.target).norm())
            .sum();
        assert!(after < 0.1 * before, "{before} -> {after}");
        let r = projection_residual(&out, Some(ConstraintKind::Midline));
        assert!(r <= 1e-3, "{r}");
    }

    #[test]
    fn midline_outside_outline_is_clamped() {
        let ann = oblique_ellipse(30.0);
        let part = shape_part(&ann, &ShapeConfig::default()).unwrap().part;
        let m = vec![Point2::new(0.5, -0.2), Point2::new(0.5, 1.2)];
        let update = apply_midline(&part, &m, Some(&ann.outline));
        assert_eq!(update.warnings.len(), 1);
        let outline = canonical_outline(&ann.outline).unwrap();
        for c in &update.constraints {
            let on = polygon::closest_point(&outline, &c.target).0;
            assert!(polygon::contains(&outline, &c.target) || (on - c.target).norm() < 1e-12);
        }
        assert!(apply_midline(&part, &[], None).constraints.is_empty());
    }

    #[test]
    fn landmarks_snap_to_a_symmetric_pair() {
        let part = shape_part(&oblique_ellipse(30.0), &ShapeConfig::default()).unwrap().part;
        let (a, b) = (Point2::new(0.4, 0.55), Point2::new(0.4, 0.45));
        let [ca, cb] = snap_landmark(&part, &a, &b).unwrap();
        assert_eq!(part.partner(ca.vertex), cb.vertex);
        assert_eq!(ca.kind, ConstraintKind::Landmark);
    }
}
