//! Splatting matched discs into the target page and blending the votes.

use super::chart::{PixelKind, TargetAtlas};
use super::disc::SurfaceTexture;
use super::gpm::{barycentric_ccw, GeodesicPolarMap};
use super::image::Planes;
use crate::error::Result;
use crate::geometry::Point2;
use crate::linalg::{factorize_spd, NormalFactor};

/// Weighted sums of (L, a, b, ∂L/∂x, ∂L/∂y) per page pixel; the gradient
/// is per pixel with `y` pointing down.
#[derive(Clone, Debug)]
pub struct VoteBuffer {
    pub width: usize,
    pub height: usize,
    pub weight: Vec<f32>,
    pub acc: Vec<[f32; 5]>,
}

impl VoteBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            weight: vec![0.0; width * height],
            acc: vec![[0.0; 5]; width * height],
        }
    }

    pub fn clear(&mut self) {
        self.weight.fill(0.0);
        self.acc.fill([0.0; 5]);
    }

    /// Normalized votes; pixels without votes are zero.
    pub fn finalize(&self) -> Vec<[f32; 5]> {
        self.acc
            .iter()
            .zip(&self.weight)
            .map(|(a, &w)| if w > 0.0 { a.map(|x| x / w) } else { [0.0; 5] })
            .collect()
    }
}

fn rotate(p: &Point2, angle: f64) -> Point2 {
    let (s, c) = angle.sin_cos();
    Point2::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// Splats the source disc, turned by `angle`, through the target disc into
/// every target-face pixel within the radius, with a Gaussian falloff of
/// `sigma` around the center.
pub fn splat(
    buffer: &mut VoteBuffer,
    atlas: &TargetAtlas,
    target: &GeodesicPolarMap,
    source: &GeodesicPolarMap,
    source_tex: &SurfaceTexture,
    angle: f64,
    sigma: f64,
) {
    let (w, h) = (atlas.width as f64, atlas.height as f64);
    let r = target.radius.min(source.radius);
    for (i, &f) in target.faces.iter().enumerate() {
        let Some(uv) = atlas.target_uv(f) else { continue };
        let u = &target.face_coords[i];
        let orient = (uv[1] - uv[0]).perp(&(uv[2] - uv[0]));
        if orient <= 0.0 {
            continue;
        }
        // page-UV gradient -> per-pixel derivatives of the target coordinates
        let jac = {
            let a = nalgebra::Matrix2::from_columns(&[uv[1] - uv[0], uv[2] - uv[0]]);
            let b = nalgebra::Matrix2::from_columns(&[u[1] - u[0], u[2] - u[0]]);
            match a.try_inverse() {
                Some(ai) => b * ai,
                None => continue,
            }
        };
        let du_dx = jac * Point2::new(1.0 / w, 0.0);
        let du_dy = jac * Point2::new(0.0, -1.0 / h);
        let xs = uv.iter().map(|p| p.x * w - 0.5);
        let ys = uv.iter().map(|p| (1.0 - p.y) * h - 0.5);
        let x0 = xs.clone().fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let x1 = xs.fold(f64::NEG_INFINITY, f64::max).floor().min(w - 1.0);
        let y0 = ys.clone().fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let y1 = ys.fold(f64::NEG_INFINITY, f64::max).floor().min(h - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let pix = y * atlas.width + x;
                if atlas.kind[pix] != PixelKind::Target {
                    continue;
                }
                let c = atlas.pixel_center(x, y);
                let Some(b) = barycentric_ccw(&c, &uv) else { continue };
                if b.iter().any(|&l| l < -1e-9) {
                    continue;
                }
                let ut = u[0] * b[0] + u[1] * b[1] + u[2] * b[2];
                let rad = ut.norm();
                if rad > r {
                    continue;
                }
                let us = rotate(&ut, angle);
                let Some((si, sb)) = source.locate(&us) else { continue };
                let (lab, gs) = source_tex.sample_in(source, si, &sb);
                let gt = rotate(&gs, -angle);
                let wt = (-(rad * rad) / (2.0 * sigma * sigma)).exp() as f32;
                let v = [lab[0], lab[1], lab[2], gt.dot(&du_dx) as f32, gt.dot(&du_dy) as f32];
                buffer.weight[pix] += wt;
                let acc = &mut buffer.acc[pix];
                for k in 0..5 {
                    acc[k] += wt * v[k];
                }
            }
        }
    }
}

const NEIGHBORS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn neighbor(width: usize, height: usize, x: usize, y: usize, d: (isize, isize)) -> Option<usize> {
    let nx = x as isize + d.0;
    let ny = y as isize + d.1;
    (nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height).then(|| ny as usize * width + nx as usize)
}

/// Solver for the blending systems, keeping the last factorization.
#[derive(Default)]
pub struct Blender {
    cache: Option<(Vec<u8>, u64, NormalFactor)>,
}

impl Blender {
    /// Screened Poisson blend of the votes over pixels with `roles[p] == 1`:
    /// minimizes `Σ (I − V)² + λ Σ (I_q − I_p − G_pq)²` over 4-neighbour
    /// edges, where neighbours with role 2 are fixed to `fixed` values and
    /// all other neighbours are ignored. `G` is the voted luminance
    /// gradient for channel 0 and the vote difference for the others;
    /// edges to fixed pixels use a zero chroma difference.
    pub fn screened_poisson(
        &mut self,
        width: usize,
        height: usize,
        roles: &[u8],
        votes: &[[f32; 5]],
        fixed: &[[f32; 3]],
        lambda: f64,
    ) -> Result<Vec<[f32; 3]>> {
        let index = index_of(roles, 1);
        let n = index.iter().filter(|i| **i != usize::MAX).count();
        let mut out = vec![[0f32; 3]; roles.len()];
        if n == 0 {
            return Ok(out);
        }
        let mut rhs = vec![vec![0.0; n]; 3];
        let mut entries = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let p = y * width + x;
                let ip = index[p];
                if ip == usize::MAX {
                    continue;
                }
                entries.push((ip, ip, 1.0));
                for c in 0..3 {
                    rhs[c][ip] += votes[p][c] as f64;
                }
                if lambda == 0.0 {
                    continue;
                }
                for d in NEIGHBORS {
                    let Some(q) = neighbor(width, height, x, y, d) else { continue };
                    let axis = if d.0 != 0 { 3 } else { 4 };
                    let sign = (d.0 + d.1) as f64;
                    match roles[q] {
                        1 => {
                            if q < p {
                                continue;
                            }
                            let iq = index[q];
                            entries.push((ip, ip, lambda));
                            entries.push((iq, iq, lambda));
                            entries.push((iq, ip, -lambda));
                            let mut g = [0.0; 3];
                            g[0] = sign * 0.5 * (votes[p][axis] + votes[q][axis]) as f64;
                            for c in 1..3 {
                                g[c] = (votes[q][c] - votes[p][c]) as f64;
                            }
                            for c in 0..3 {
                                rhs[c][ip] -= lambda * g[c];
                                rhs[c][iq] += lambda * g[c];
                            }
                        }
                        2 => {
                            entries.push((ip, ip, lambda));
                            let g0 = sign * votes[p][axis] as f64;
                            rhs[0][ip] += lambda * (fixed[q][0] as f64 - g0);
                            for c in 1..3 {
                                rhs[c][ip] += lambda * fixed[q][c] as f64;
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        let sol = self.solve(roles, lambda, n, &entries, &rhs)?;
        for (p, &ip) in index.iter().enumerate() {
            if ip != usize::MAX {
                out[p] = [sol[0][ip] as f32, sol[1][ip] as f32, sol[2][ip] as f32];
            }
        }
        Ok(out)
    }

    /// Harmonic interpolation over pixels with `roles[p] == 1` from
    /// 4-neighbours with role 2, plus a faint pull towards `mean` so that
    /// regions without fixed neighbours stay well posed.
    pub fn harmonic_fill(
        &mut self,
        width: usize,
        height: usize,
        roles: &[u8],
        fixed: &[[f32; 3]],
        mean: [f32; 3],
    ) -> Result<Vec<[f32; 3]>> {
        const PULL: f64 = 1e-6;
        let index = index_of(roles, 1);
        let n = index.iter().filter(|i| **i != usize::MAX).count();
        let mut out = vec![[0f32; 3]; roles.len()];
        if n == 0 {
            return Ok(out);
        }
        let mut rhs = vec![vec![0.0; n]; 3];
        let mut entries = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let p = y * width + x;
                let ip = index[p];
                if ip == usize::MAX {
                    continue;
                }
                entries.push((ip, ip, PULL));
                for c in 0..3 {
                    rhs[c][ip] += PULL * mean[c] as f64;
                }
                for d in NEIGHBORS {
                    let Some(q) = neighbor(width, height, x, y, d) else { continue };
                    match roles[q] {
                        1 if q > p => {
                            let iq = index[q];
                            entries.push((ip, ip, 1.0));
                            entries.push((iq, iq, 1.0));
                            entries.push((iq, ip, -1.0));
                        }
                        2 => {
                            entries.push((ip, ip, 1.0));
                            for c in 0..3 {
                                rhs[c][ip] += fixed[q][c] as f64;
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        let sol = self.solve(roles, f64::NAN, n, &entries, &rhs)?;
        for (p, &ip) in index.iter().enumerate() {
            if ip != usize::MAX {
                out[p] = [sol[0][ip] as f32, sol[1][ip] as f32, sol[2][ip] as f32];
            }
        }
        Ok(out)
    }

    fn solve(
        &mut self,
        roles: &[u8],
        key: f64,
        n: usize,
        entries: &[(usize, usize, f64)],
        rhs: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        let bits = key.to_bits();
        let hit = matches!(&self.cache, Some((r, k, _)) if *k == bits && r.as_slice() == roles);
        if !hit {
            let factor = factorize_spd(n, entries)?;
            self.cache = Some((roles.to_vec(), bits, factor));
        }
        Ok(self.cache.as_ref().unwrap().2.solve_columns(rhs))
    }
}

fn index_of(roles: &[u8], role: u8) -> Vec<usize> {
    let mut next = 0;
    roles
        .iter()
        .map(|&r| {
            if r == role {
                next += 1;
                next - 1
            } else {
                usize::MAX
            }
        })
        .collect()
}

/// Spreads filled pixels into unfilled ones for `passes` rings, averaging
/// filled 8-neighbours. Returns the grown mask.
pub fn dilate(img: &mut Planes, filled: &[bool], passes: usize) -> Vec<bool> {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut mask = filled.to_vec();
    for _ in 0..passes {
        let mut grown = mask.clone();
        let mut updates = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if mask[y * w + x] {
                    continue;
                }
                let mut sum = vec![0f32; ch];
                let mut count = 0;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        if mask[ny as usize * w + nx as usize] {
                            for (s, v) in sum.iter_mut().zip(img.pixel(nx as usize, ny as usize)) {
                                *s += v;
                            }
                            count += 1;
                        }
                    }
                }
                if count > 0 {
                    updates.push((x, y, sum.iter().map(|s| s / count as f32).collect::<Vec<_>>()));
                    grown[y * w + x] = true;
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        for (x, y, v) in updates {
            img.pixel_mut(x, y).copy_from_slice(&v);
        }
        mask = grown;
    }
    mask
}
