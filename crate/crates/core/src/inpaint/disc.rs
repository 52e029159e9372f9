//! Geodesic disc signatures and the rotation-minimizing disc distance.

use super::gpm::GeodesicPolarMap;
use super::image::Planes;
use crate::geometry::Point2;

/// Polar sampling pattern of a disc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscParams {
    /// Angular samples.
    pub n: usize,
    /// Radial samples.
    pub m: usize,
    /// Weight of the luminance gradient against color.
    pub lambda: f32,
    /// Model length of one drawing pixel; gradients are measured per pixel.
    pub pixel: f64,
}

impl Default for DiscParams {
    fn default() -> Self {
        Self {
            n: 16,
            m: 4,
            lambda: 0.2,
            pixel: 1.0,
        }
    }
}

/// Textured surface: each face reads one page at per-corner UVs.
#[derive(Clone, Copy)]
pub struct SurfaceTexture<'a> {
    pub pages: [&'a Planes; 2],
    pub uv: &'a [[Point2; 3]],
    pub page: &'a [u8],
}

impl SurfaceTexture<'_> {
    /// Lab color and the luminance gradient per model length, expressed in
    /// the polar map's frame, at barycentric `b` of covered face `i`.
    pub fn sample_in(&self, gpm: &GeodesicPolarMap, i: usize, b: &[f64; 3]) -> ([f32; 3], Point2) {
        let f = gpm.faces[i];
        let uvs = &self.uv[f];
        let uv = uvs[0] * b[0] + uvs[1] * b[1] + uvs[2] * b[2];
        let mut px = [0f32; 5];
        self.pages[self.page[f] as usize].sample(&uv, &mut px);
        let g = uv_gradient_to_local(&gpm.face_coords[i], uvs, Point2::new(px[3] as f64, px[4] as f64));
        ([px[0], px[1], px[2]], g)
    }
}

/// Chains a gradient per UV unit through the affine map between a
/// triangle's local coordinates `u` and its UVs.
pub fn uv_gradient_to_local(u: &[Point2; 3], uv: &[Point2; 3], g_uv: Point2) -> Point2 {
    let a = nalgebra::Matrix2::from_columns(&[uv[1] - uv[0], uv[2] - uv[0]]);
    let b = nalgebra::Matrix2::from_columns(&[u[1] - u[0], u[2] - u[0]]);
    match b.try_inverse() {
        Some(bi) => (a * bi).transpose() * g_uv,
        None => Point2::zeros(),
    }
}

/// Sampled disc: `values[j * m + k]` holds (L, a, b, λ·g_r, λ·g_t) at
/// angle `θ_j` and radius `r_k`, with the gradient split into radial and
/// tangential components so that rotating the disc only shifts `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Signature {
    pub values: Vec<[f32; 5]>,
    pub valid: Vec<bool>,
}

impl Signature {
    pub fn constant(p: &DiscParams, value: [f32; 5]) -> Self {
        Self {
            values: vec![value; p.n * p.m],
            valid: vec![true; p.n * p.m],
        }
    }

    /// The signature rotated by `shift` angular steps: entry `j` takes the
    /// value at `j + shift`.
    pub fn rotated(&self, p: &DiscParams, shift: usize) -> Self {
        let mut out = self.clone();
        for j in 0..p.n {
            for k in 0..p.m {
                let src = ((j + shift) % p.n) * p.m + k;
                out.values[j * p.m + k] = self.values[src];
                out.valid[j * p.m + k] = self.valid[src];
            }
        }
        out
    }
}

/// Sample position of angular index `j` and radial index `k`.
pub fn sample_point(p: &DiscParams, radius: f64, j: usize, k: usize) -> Point2 {
    let theta = std::f64::consts::TAU * j as f64 / p.n as f64;
    let r = radius * (k + 1) as f64 / p.m as f64;
    Point2::new(r * theta.cos(), r * theta.sin())
}

/// Samples the texture over a polar map. Points outside the covered
/// faces are marked invalid.
pub fn sample_disc(gpm: &GeodesicPolarMap, tex: &SurfaceTexture, p: &DiscParams) -> Signature {
    let mut values = vec![[0f32; 5]; p.n * p.m];
    let mut valid = vec![false; p.n * p.m];
    for j in 0..p.n {
        let theta = std::f64::consts::TAU * j as f64 / p.n as f64;
        let (radial, tangential) = (Point2::new(theta.cos(), theta.sin()), Point2::new(-theta.sin(), theta.cos()));
        for k in 0..p.m {
            let q = sample_point(p, gpm.radius, j, k);
            let Some((i, b)) = gpm.locate(&q) else { continue };
            let (lab, g) = tex.sample_in(gpm, i, &b);
            let g = g * p.pixel;
            values[j * p.m + k] = [
                lab[0],
                lab[1],
                lab[2],
                p.lambda * g.dot(&radial) as f32,
                p.lambda * g.dot(&tangential) as f32,
            ];
            valid[j * p.m + k] = true;
        }
    }
    Signature { values, valid }
}

/// Distance between a source and a target disc minimized over cyclic
/// shifts `ℓ` (source angle `θ_j + ℓΔθ` against target angle `θ_j`).
/// Sums skip pairs with an invalid side and are rescaled to the full
/// sample count. Returns (distance, ℓ); ties go to the smallest shift.
pub fn disc_distance(s: &Signature, t: &Signature, p: &DiscParams) -> (f64, usize) {
    disc_distance_bounded(s, t, p, f64::INFINITY)
}

/// As [`disc_distance`], abandoning shifts whose partial sum already
/// exceeds `bound` when every sample is valid.
pub fn disc_distance_bounded(s: &Signature, t: &Signature, p: &DiscParams, bound: f64) -> (f64, usize) {
    let (n, m) = (p.n, p.m);
    let full = s.valid.iter().chain(&t.valid).all(|&v| v);
    let mut best = (f64::INFINITY, 0);
    for shift in 0..n {
        let limit = if full { best.0.min(bound) } else { f64::INFINITY };
        let mut sum = 0f32;
        let mut count = 0usize;
        'rows: for j in 0..n {
            let sj = ((j + shift) % n) * m;
            let tj = j * m;
            for k in 0..m {
                if !(s.valid[sj + k] && t.valid[tj + k]) {
                    continue;
                }
                let (a, b) = (&s.values[sj + k], &t.values[tj + k]);
                let mut e = 0f32;
                for c in 0..5 {
                    let d = a[c] - b[c];
                    e += d * d;
                }
                sum += e.sqrt();
                count += 1;
            }
            if sum as f64 >= limit {
                break 'rows;
            }
        }
        if count == 0 {
            continue;
        }
        let d = sum as f64 * (n * m) as f64 / count as f64;
        if d < best.0 {
            best = (d, shift);
        }
    }
    best
}
