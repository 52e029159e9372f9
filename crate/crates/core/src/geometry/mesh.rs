use std::collections::BTreeMap;

use super::Point3;
use crate::error::{Error, Result};

/// Indexed triangle mesh with precomputed edge and adjacency tables.
///
/// Connectivity is immutable after construction; positions may be updated
/// in place with [`TriangleMesh::set_positions`].
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    positions: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    neighbors: Vec<Vec<usize>>,
    vertex_faces: Vec<Vec<usize>>,
    /// Faces incident to each edge, indexed like `edges`.
    edge_faces: Vec<Vec<usize>>,
}

impl TriangleMesh {
    /// Builds a mesh, checking index ranges and repeated face corners.
    pub fn new(positions: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = positions.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!("face {fi} has an out-of-range index")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex")));
            }
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex position".into()));
        }
        let mut edge_map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        let mut vertex_faces = vec![Vec::new(); n];
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edge_map.entry((a.min(b), a.max(b))).or_default().push(fi);
                vertex_faces[f[k]].push(fi);
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        let mut edges = Vec::with_capacity(edge_map.len());
        let mut edge_faces = Vec::with_capacity(edge_map.len());
        for ((a, b), fs) in edge_map {
            neighbors[a].push(b);
            neighbors[b].push(a);
            edges.push([a, b]);
            edge_faces.push(fs);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Self {
            positions,
            faces,
            edges,
            neighbors,
            vertex_faces,
            edge_faces,
        })
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn set_positions(&mut self, positions: Vec<Point3>) {
        assert_eq!(positions.len(), self.positions.len());
        self.positions = positions;
    }

    pub fn positions_mut(&mut self) -> &mut [Point3] {
        &mut self.positions
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Undirected edges `[a, b]` with `a < b`, sorted.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge_faces(&self, edge: usize) -> &[usize] {
        &self.edge_faces[edge]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Index of the edge `{a, b}` if it exists.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.binary_search(&key).ok()
    }

    /// Edges with exactly one incident face.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        self.edges
            .iter()
            .zip(&self.edge_faces)
            .filter(|(_, f)| f.len() == 1)
            .map(|(e, _)| *e)
            .collect()
    }

    /// True when every edge has exactly two incident faces.
    pub fn is_closed(&self) -> bool {
        self.edge_faces.iter().all(|f| f.len() == 2)
    }

    /// Every edge has one or two faces and each interior edge is traversed in
    /// opposite directions by its two faces.
    pub fn is_oriented_manifold(&self) -> bool {
        for (e, fs) in self.edges.iter().zip(&self.edge_faces) {
            match fs.len() {
                1 => {}
                2 => {
                    let dir = |f: usize| {
                        let t = self.faces[f];
                        (0..3).any(|k| t[k] == e[0] && t[(k + 1) % 3] == e[1])
                    };
                    if dir(fs[0]) == dir(fs[1]) {
                        return false;
                    }
                }
                _ => return false,
            }
        }
        // vertex links must be single fans
        for v in 0..self.vertex_count() {
            if !self.vertex_is_manifold(v) {
                return false;
            }
        }
        true
    }

    fn vertex_is_manifold(&self, v: usize) -> bool {
        let fs = &self.vertex_faces[v];
        if fs.is_empty() {
            return true;
        }
        // walk the fan through shared edges and make sure it reaches every face
        let mut seen = vec![false; fs.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            let fi = fs[i];
            for &u in &self.faces[fi] {
                if u == v {
                    continue;
                }
                if let Some(e) = self.edge_index(v, u) {
                    for &g in &self.edge_faces[e] {
                        if let Some(j) = fs.iter().position(|&x| x == g) {
                            if !seen[j] {
                                seen[j] = true;
                                count += 1;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
        count == fs.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        let used = self.vertex_faces.iter().filter(|f| !f.is_empty()).count() as i64;
        used - self.edges.len() as i64 + self.faces.len() as i64
    }

    /// Unnormalized face normal (length = twice the area).
    pub fn face_cross(&self, f: usize) -> Point3 {
        let [a, b, c] = self.faces[f];
        let p = &self.positions;
        (p[b] - p[a]).cross(&(p[c] - p[a]))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_normal(&self, f: usize) -> Point3 {
        let c = self.face_cross(f);
        let n = c.norm();
        if n > 0.0 {
            c / n
        } else {
            Point3::zeros()
        }
    }

    pub fn face_centroid(&self, f: usize) -> Point3 {
        let [a, b, c] = self.faces[f];
        (self.positions[a] + self.positions[b] + self.positions[c]) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.face_count()).map(|f| self.face_area(f)).sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .edges
            .iter()
            .map(|[a, b]| (self.positions[*a] - self.positions[*b]).norm())
            .sum();
        sum / self.edges.len() as f64
    }

    /// Faces grouped into edge-connected components, each sorted.
    pub fn face_components(&self, faces: &[usize]) -> Vec<Vec<usize>> {
        let mut member = vec![false; self.face_count()];
        for &f in faces {
            member[f] = true;
        }
        let mut visited = vec![false; self.face_count()];
        let mut out = Vec::new();
        for &start in faces {
            if visited[start] {
                continue;
            }
            visited[start] = true;
            let mut comp = vec![start];
            let mut stack = vec![start];
            while let Some(f) = stack.pop() {
                for k in 0..3 {
                    let t = self.faces[f];
                    let e = self.edge_index(t[k], t[(k + 1) % 3]).unwrap();
                    for &g in &self.edge_faces[e] {
                        if member[g] && !visited[g] {
                            visited[g] = true;
                            comp.push(g);
                            stack.push(g);
                        }
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Uniform graph Laplacian `L(x_i) = x_i - mean_{j∈N(i)} x_j` on a mesh.
///
/// Works for any field type supporting the needed vector-space operations
/// (`f64`, `Point3`, ...).
pub fn graph_laplacian<T>(mesh: &TriangleMesh, field: &[T]) -> Result<Vec<T>>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    laplacian_on_graph(&mesh.neighbors, field)
}

/// Uniform graph Laplacian over an explicit adjacency list.
pub fn laplacian_on_graph<T>(neighbors: &[Vec<usize>], field: &[T]) -> Result<Vec<T>>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    if field.len() != neighbors.len() {
        return Err(Error::InvalidMesh(format!(
            "field has {} values for {} vertices",
            field.len(),
            neighbors.len()
        )));
    }
    neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.is_empty() {
                return Err(Error::IsolatedVertex(i));
            }
            let mut sum = field[nb[0]];
            for &j in &nb[1..] {
                sum = sum + field[j];
            }
            Ok(field[i] - sum * (1.0 / nb.len() as f64))
        })
        .collect()
}

/// Per-vertex area (a third of the incident face areas) and area-weighted
/// unit normal.
///
/// Where the incident normals cancel (a fold, e.g. the rim of a freshly
/// doubled flat mesh) the normal falls back to the direction of the uniform
/// Laplacian, which points out of the fold.
pub fn vertex_area_normal(mesh: &TriangleMesh) -> Result<Vec<(f64, Point3)>> {
    let crosses: Vec<Point3> = (0..mesh.face_count()).map(|f| mesh.face_cross(f)).collect();
    let p = mesh.positions();
    (0..mesh.vertex_count())
        .map(|i| {
            let mut area = 0.0;
            let mut normal = Point3::zeros();
            for &f in mesh.vertex_faces(i) {
                area += crosses[f].norm() / 6.0;
                normal += crosses[f] * 0.5;
            }
            if area <= 0.0 {
                return Err(Error::DegenerateVertex(i));
            }
            let len = normal.norm();
            if len > 1e-9 * area {
                return Ok((area, normal / len));
            }
            let nb = mesh.neighbors(i);
            let mean = nb.iter().fold(Point3::zeros(), |acc, &j| acc + p[j]) / nb.len() as f64;
            let lap = p[i] - mean;
            if lap.norm() > 0.0 {
                Ok((area, lap.normalize()))
            } else {
                Err(Error::DegenerateVertex(i))
            }
        })
        .collect()
}
