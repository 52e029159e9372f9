use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Plane, Point2, TriangleMesh};
use crate::error::{Error, Result};

/// Which annotation produced a projection constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintKind {
    Outline,
    Midline,
    Landmark,
}

/// Pins the drawing-plane projection of one vertex to a 2D target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConstraint {
    pub vertex: usize,
    pub target: Point2,
    pub kind: ConstraintKind,
}

/// Closed triangle mesh of one body part together with its symmetry data.
///
/// Vertices are partitioned into symmetric pairs and midline vertices. The
/// first entry of each pair belongs to the "front" half produced at
/// construction, the second to its mirror copy.
#[derive(Clone, Debug)]
pub struct SymmetricPartMesh {
    pub mesh: TriangleMesh,
    pub plane: Plane,
    pub pairs: Vec<(usize, usize)>,
    /// Midline vertices in loop order.
    pub midline: Vec<usize>,
    pub constraints: Vec<ProjectionConstraint>,
    pub thickness: f64,
    /// Mirror face of each face under the pairing.
    pub face_partner: Vec<usize>,
    partner: Vec<usize>,
    halves: Vec<Half>,
}

/// Half of a symmetric part a vertex belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Half {
    Front,
    Back,
    Midline,
}

impl SymmetricPartMesh {
    pub fn new(
        mesh: TriangleMesh,
        plane: Plane,
        pairs: Vec<(usize, usize)>,
        midline: Vec<usize>,
        thickness: f64,
    ) -> Result<Self> {
        let n = mesh.vertex_count();
        let mut partner = vec![usize::MAX; n];
        let mut halves = vec![Half::Midline; n];
        for &(a, b) in &pairs {
            if a >= n || b >= n || partner[a] != usize::MAX || partner[b] != usize::MAX || a == b {
                return Err(Error::InvalidMesh("symmetric pairs overlap or are out of range".into()));
            }
            partner[a] = b;
            partner[b] = a;
            halves[a] = Half::Front;
            halves[b] = Half::Back;
        }
        for &m in &midline {
            if m >= n || partner[m] != usize::MAX {
                return Err(Error::InvalidMesh("midline vertex is also paired".into()));
            }
            partner[m] = m;
        }
        if partner.contains(&usize::MAX) {
            return Err(Error::InvalidMesh("some vertex is neither paired nor on the midline".into()));
        }
        let mut lookup = std::collections::BTreeMap::new();
        for (fi, f) in mesh.faces().iter().enumerate() {
            let mut key = *f;
            key.sort_unstable();
            lookup.insert(key, fi);
        }
        let mut face_partner = Vec::with_capacity(mesh.face_count());
        for f in mesh.faces() {
            let mut key = [partner[f[0]], partner[f[1]], partner[f[2]]];
            key.sort_unstable();
            match lookup.get(&key) {
                Some(&g) => face_partner.push(g),
                None => return Err(Error::InvalidMesh("connectivity is not symmetric under the pairing".into())),
            }
        }
        if thickness <= 0.0 {
            return Err(Error::InvalidMesh("thickness must be positive".into()));
        }
        Ok(Self {
            mesh,
            plane,
            pairs,
            midline,
            constraints: Vec::new(),
            thickness,
            face_partner,
            partner,
            halves,
        })
    }

    /// Mirror vertex of `v`; midline vertices map to themselves.
    pub fn partner(&self, v: usize) -> usize {
        self.partner[v]
    }

    pub fn half(&self, v: usize) -> Half {
        self.halves[v]
    }

    /// Half a face belongs to: the half of any non-midline corner, or
    /// `Front` for faces lying entirely on the midline.
    pub fn face_half(&self, f: usize) -> Half {
        for &v in &self.mesh.faces()[f] {
            match self.half(v) {
                Half::Midline => continue,
                h => return h,
            }
        }
        Half::Front
    }

    pub fn is_midline(&self, v: usize) -> bool {
        self.partner[v] == v
    }

    pub fn constraints_of(&self, kind: ConstraintKind) -> impl Iterator<Item = &ProjectionConstraint> {
        self.constraints.iter().filter(move |c| c.kind == kind)
    }

    /// Replaces every constraint of `kind` with `new`.
    pub fn replace_constraints(&mut self, kind: ConstraintKind, new: Vec<ProjectionConstraint>) {
        self.constraints.retain(|c| c.kind != kind);
        self.constraints.extend(new);
    }

    /// Checks midline loops and the face pairing.
    pub fn validate(&self) -> Result<()> {
        let mid: BTreeSet<usize> = self.midline.iter().copied().collect();
        for &m in &self.midline {
            let loop_nb = self.mesh.neighbors(m).iter().filter(|u| mid.contains(u)).count();
            if loop_nb < 2 {
                return Err(Error::InvalidMesh(format!("midline vertex {m} is not on a closed loop")));
            }
        }
        for (fi, &g) in self.face_partner.iter().enumerate() {
            if self.face_partner[g] != fi {
                return Err(Error::InvalidMesh("face pairing is not an involution".into()));
            }
        }
        Ok(())
    }
}
