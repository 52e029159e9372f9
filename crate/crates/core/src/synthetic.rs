//! Synthetic meshes and textures for tests, benchmarks and demos.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};

use crate::geometry::{Point2, Point3, TriangleMesh};
use crate::texturer::{FaceFlag, TexturedMesh};

/// Unit icosphere after `levels` rounds of 4-to-1 subdivision.
pub fn icosphere(levels: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut pos: Vec<Point3> = [
        (-1., t, 0.),
        (1., t, 0.),
        (-1., -t, 0.),
        (1., -t, 0.),
        (0., -1., t),
        (0., 1., t),
        (0., -1., -t),
        (0., 1., -t),
        (t, 0., -1.),
        (t, 0., 1.),
        (-t, 0., -1.),
        (-t, 0., 1.),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::new(x, y, z).normalize())
    .collect();
    let mut faces = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid = BTreeMap::new();
        let mut split = |a: usize, b: usize, pos: &mut Vec<Point3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                pos.push(((pos[a] + pos[b]) * 0.5).normalize());
                pos.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = split(a, b, &mut pos);
            let bc = split(b, c, &mut pos);
            let ca = split(c, a, &mut pos);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriangleMesh::new(pos, faces).expect("icosphere is valid")
}

/// Torus around the z axis with `nu` segments around the axis and `nv`
/// around the tube.
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> TriangleMesh {
    let mut pos = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let a = std::f64::consts::TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let b = std::f64::consts::TAU * j as f64 / nv as f64;
            let r = major + minor * b.cos();
            pos.push(Point3::new(r * a.cos(), r * a.sin(), minor * b.sin()));
        }
    }
    let at = |i: usize, j: usize| (i % nu) * nv + j % nv;
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    TriangleMesh::new(pos, faces).expect("torus is valid")
}

/// Longitude around z.
pub fn longitude(p: &Point3) -> f64 {
    p.y.atan2(p.x).rem_euclid(std::f64::consts::TAU)
}

/// Textures a mesh with longitude/height coordinates: `u` is the
/// longitude over 2π, unwrapped per face, and `v` the height mapped from
/// the mesh's z range to [0, 1]. Every face reads the drawing page.
pub fn cylindrical_texture(mesh: TriangleMesh) -> TexturedMesh {
    let (lo, hi) = mesh
        .positions()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    let uv: Vec<[Point2; 3]> = mesh
        .faces()
        .iter()
        .map(|f| {
            let u0 = longitude(&mesh.positions()[f[0]]) / std::f64::consts::TAU;
            f.map(|v| {
                let p = mesh.positions()[v];
                let mut u = longitude(&p) / std::f64::consts::TAU;
                u -= (u - u0).round();
                Point2::new(u, (p.z - lo) / (hi - lo))
            })
        })
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

/// Gray image whose value depends on `v` only.
pub fn horizontal_pattern(width: u32, height: u32, gray: impl Fn(f64) -> u8) -> RgbImage {
    RgbImage::from_fn(width, height, |_, y| {
        let v = 1.0 - (y as f64 + 0.5) / height as f64;
        let g = gray(v);
        Rgb([g, g, g])
    })
}

/// Marks faces whose centroid satisfies `pred` as ill.
pub fn mask_faces(tm: &mut TexturedMesh, pred: impl Fn(&Point3) -> bool) -> usize {
    let mut count = 0;
    for f in 0..tm.mesh.face_count() {
        if pred(&tm.mesh.face_centroid(f)) {
            tm.flags[f] = FaceFlag::Ill;
            count += 1;
        }
    }
    count
}
