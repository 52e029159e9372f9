//! Fills ill-textured faces with texture copied from elsewhere on the
//! surface: geodesic discs are matched by PatchMatch and the matches are
//! voted into a second texture page and blended by screened Poisson.

pub mod chart;
pub mod disc;
pub mod gpm;
pub mod image;
pub mod patchmatch;
pub mod vote;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use ::image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use self::chart::{parameterize_target, PixelKind, TargetAtlas};
use self::disc::{sample_disc, DiscParams, Signature, SurfaceTexture};
use self::gpm::{GeodesicPolarMap, GpmBuilder};
use self::image::{lab_to_rgb, Planes};
use self::patchmatch::{init_nnf, refresh, search_pass, total_energy, DiscSet, NnfEntry};
use self::vote::{dilate, splat, Blender, VoteBuffer};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::texturer::{FaceFlag, TexturedMesh};

/// Inpainting parameters. Radii are in multiples of the mean edge length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InpaintConfig {
    pub page_width: usize,
    pub page_height: usize,
    pub radius_max: f64,
    pub radius_min: f64,
    pub radius_step: f64,
    pub angular_samples: usize,
    pub radial_samples: usize,
    pub gradient_weight: f32,
    pub poisson_weight: f64,
    /// Relative energy change that ends a scale.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub collar_rings: usize,
    pub padding: usize,
    pub debug: bool,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            page_width: 400,
            page_height: 400,
            radius_max: 8.0,
            radius_min: 3.0,
            radius_step: 2.5,
            angular_samples: 16,
            radial_samples: 4,
            gradient_weight: 0.2,
            poisson_weight: 0.2,
            tolerance: 0.01,
            max_iterations: 10,
            seed: 0,
            collar_rings: 2,
            padding: 3,
            debug: false,
        }
    }
}

impl InpaintConfig {
    /// Disc radii from largest to smallest.
    pub fn radii(&self) -> Vec<f64> {
        let mut out = vec![self.radius_max];
        if self.radius_step > 0.0 {
            let mut r = self.radius_max - self.radius_step;
            while r >= self.radius_min - 1e-9 {
                out.push(r);
                r -= self.radius_step;
            }
        }
        out
    }
}

/// Progress of a running inpainting job.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub scale: usize,
    pub scales: usize,
    pub radius: f64,
    pub iteration: usize,
    pub energy: f64,
}

/// Energies of one radius: per iteration, the energy after the search pass
/// and after re-sampling the targets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub radius: f64,
    pub sources: usize,
    pub targets: usize,
    pub pass_energies: Vec<(f64, f64)>,
}

pub struct DebugImages {
    pub votes: RgbImage,
    pub nnf: RgbImage,
}

pub struct InpaintOutput {
    pub mesh: TexturedMesh,
    /// The inpainting page, absent when nothing needed filling.
    pub page: Option<RgbImage>,
    pub scales: Vec<ScaleReport>,
    pub warnings: Vec<String>,
    pub debug: Option<DebugImages>,
}

/// Callbacks of a running job.
#[derive(Default, Clone, Copy)]
pub struct Hooks<'a> {
    pub progress: Option<&'a (dyn Fn(Progress) + Sync)>,
    pub cancel: Option<&'a AtomicBool>,
}

impl Hooks<'_> {
    fn check(&self) -> Result<()> {
        match self.cancel {
            Some(c) if c.load(Ordering::Relaxed) => Err(Error::Cancelled),
            _ => Ok(()),
        }
    }
}

/// Faces to fill: ill faces and faces filled by an earlier run.
pub fn target_faces(tm: &TexturedMesh) -> Vec<bool> {
    tm.flags
        .iter()
        .zip(&tm.page)
        .map(|(f, &p)| matches!(f, FaceFlag::Ill | FaceFlag::Inpainted) || p != 0)
        .collect()
}

struct State {
    atlas: TargetAtlas,
    drawing: Planes,
    page: Planes,
    face_uv: Vec<[Point2; 3]>,
    face_page: Vec<u8>,
    collar: Vec<[f32; 3]>,
    blender: Blender,
}

impl State {
    fn texture(&self) -> SurfaceTexture<'_> {
        SurfaceTexture {
            pages: [&self.drawing, &self.page],
            uv: &self.face_uv,
            page: &self.face_page,
        }
    }

    /// Writes target values into the page, re-fills the gutter and
    /// refreshes the gradient channels.
    fn store(&mut self, target: &[[f32; 3]]) {
        let (w, h) = (self.atlas.width, self.atlas.height);
        let mut filled = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let v = match self.atlas.kind[p] {
                    PixelKind::Target => target[p],
                    PixelKind::Collar => self.collar[p],
                    PixelKind::Empty => [0.0; 3],
                };
                self.page.pixel_mut(x, y).copy_from_slice(&[v[0], v[1], v[2], 0.0, 0.0]);
                filled[p] = self.atlas.kind[p] != PixelKind::Empty;
            }
        }
        dilate(&mut self.page, &filled, 4);
        self.page.update_gradient();
    }
}

fn roles(atlas: &TargetAtlas, target_role: impl Fn(usize) -> u8) -> Vec<u8> {
    atlas
        .kind
        .iter()
        .enumerate()
        .map(|(p, k)| match k {
            PixelKind::Target => target_role(p),
            PixelKind::Collar => 2,
            PixelKind::Empty => 0,
        })
        .collect()
}

/// Fills the target faces of `tm` (see [`target_faces`]) using texture from
/// the rest of the surface.
pub fn inpaint(tm: &TexturedMesh, drawing: &RgbImage, cfg: &InpaintConfig, hooks: Hooks) -> Result<InpaintOutput> {
    let mesh = &tm.mesh;
    let target = target_faces(tm);
    if !target.iter().any(|&t| t) {
        return Ok(InpaintOutput {
            mesh: tm.clone(),
            page: None,
            scales: Vec::new(),
            warnings: Vec::new(),
            debug: None,
        });
    }
    if target.iter().all(|&t| t) {
        return Err(Error::EmptySource);
    }
    let mut warnings = Vec::new();
    let params = DiscParams {
        n: cfg.angular_samples,
        m: cfg.radial_samples,
        lambda: cfg.gradient_weight,
        pixel: 1.0 / drawing.width().max(drawing.height()).max(1) as f64,
    };
    let atlas = parameterize_target(mesh, &target, cfg.page_width, cfg.page_height, cfg.collar_rings, cfg.padding)?;
    let drawing_planes = Planes::lab_from_rgb(drawing);
    let (w, h) = (atlas.width, atlas.height);
    let mut face_uv = tm.uv.clone();
    let mut face_page = vec![0u8; mesh.face_count()];
    for f in 0..mesh.face_count() {
        if let Some(uv) = atlas.target_uv(f) {
            face_uv[f] = uv;
            face_page[f] = 1;
        }
    }
    let mut collar = vec![[0f32; 3]; w * h];
    let mut mean = [0f64; 3];
    let mut count = 0usize;
    for (p, owner) in atlas.owner.iter().enumerate() {
        if atlas.kind[p] != PixelKind::Collar {
            continue;
        }
        let o = owner.unwrap();
        let f = atlas.charts[o.chart as usize].faces[o.local as usize];
        let b = o.bary;
        let uv = tm.uv[f][0] * b[0] as f64 + tm.uv[f][1] * b[1] as f64 + tm.uv[f][2] * b[2] as f64;
        let mut px = [0f32; 3];
        drawing_planes.sample(&uv, &mut px);
        collar[p] = px;
        for c in 0..3 {
            mean[c] += px[c] as f64;
        }
        count += 1;
    }
    if count == 0 {
        for f in (0..mesh.face_count()).filter(|&f| !target[f]) {
            let uv = (tm.uv[f][0] + tm.uv[f][1] + tm.uv[f][2]) / 3.0;
            let mut px = [0f32; 3];
            drawing_planes.sample(&uv, &mut px);
            for c in 0..3 {
                mean[c] += px[c] as f64;
            }
            count += 1;
        }
    }
    let mean = mean.map(|m| (m / count as f64) as f32);
    let mut state = State {
        atlas,
        drawing: drawing_planes,
        page: Planes::new(w, h, 5),
        face_uv,
        face_page,
        collar,
        blender: Blender::default(),
    };
    let init_roles = roles(&state.atlas, |_| 1);
    let init = state.blender.harmonic_fill(w, h, &init_roles, &state.collar, mean)?;
    state.store(&init);

    let target_vertices: Vec<usize> = {
        let mut v: Vec<usize> = (0..mesh.face_count())
            .filter(|&f| target[f])
            .flat_map(|f| mesh.faces()[f])
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let target_index: BTreeMap<usize, usize> = target_vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let target_adjacency: Vec<Vec<usize>> = target_vertices
        .iter()
        .map(|&v| mesh.neighbors(v).iter().filter_map(|u| target_index.get(u).copied()).collect())
        .collect();
    let allowed: Vec<bool> = target.iter().map(|t| !t).collect();
    let edge = mesh.mean_edge_length();
    let radii = cfg.radii();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut builder = GpmBuilder::new(mesh);
    let mut scales = Vec::new();
    let mut previous: BTreeMap<usize, usize> = BTreeMap::new();
    let mut buffer = VoteBuffer::new(w, h);
    let mut last_nnf: Option<(Vec<NnfEntry>, Vec<usize>)> = None;
    let mut any_scale = false;

    for (si, &rel) in radii.iter().enumerate() {
        hooks.check()?;
        let r = rel * edge;
        let tex = state.texture();
        let mut source_vertices = Vec::new();
        let mut source_sigs = Vec::new();
        for v in 0..mesh.vertex_count() {
            if target_index.contains_key(&v) {
                continue;
            }
            let (g, shrunk) = builder.build(v, r);
            if shrunk || g.faces.is_empty() || !g.within(&allowed) {
                continue;
            }
            let sig = sample_disc(&g, &tex, &params);
            if sig.valid.iter().all(|&x| x) {
                source_vertices.push(v);
                source_sigs.push(sig);
            }
        }
        if source_vertices.is_empty() {
            warnings.push(format!("no source discs of radius {r:.4}; scale skipped"));
            continue;
        }
        any_scale = true;
        let source_index: BTreeMap<usize, usize> = source_vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let sources = DiscSet {
            adjacency: source_vertices
                .iter()
                .map(|&v| mesh.neighbors(v).iter().filter_map(|u| source_index.get(u).copied()).collect())
                .collect(),
            signatures: source_sigs,
        };
        let mut shrunk_count = 0;
        let target_gpms: Vec<GeodesicPolarMap> = target_vertices
            .iter()
            .map(|&v| {
                let (g, shrunk) = builder.build(v, r);
                shrunk_count += shrunk as usize;
                g
            })
            .collect();
        if shrunk_count > 0 {
            warnings.push(format!("{shrunk_count} target discs shrunk at radius {r:.4} where the surface folds"));
        }
        let sample_targets = |state: &State| -> Vec<Signature> {
            let tex = state.texture();
            target_gpms.iter().map(|g| sample_disc(g, &tex, &params)).collect()
        };
        let mut targets = DiscSet {
            signatures: sample_targets(&state),
            adjacency: target_adjacency.clone(),
        };
        let mut nnf = init_nnf(targets.len(), sources.len(), &mut rng)?;
        for (t, e) in nnf.iter_mut().enumerate() {
            if let Some(s) = previous.get(&target_vertices[t]).and_then(|v| source_index.get(v)) {
                e.source = *s;
            }
        }
        refresh(&targets, &sources, &mut nnf, &params);
        let mut report = ScaleReport {
            radius: r,
            sources: sources.len(),
            targets: targets.len(),
            pass_energies: Vec::new(),
        };
        let mut energy = total_energy(&nnf);
        for iteration in 0..cfg.max_iterations {
            hooks.check()?;
            let searched = search_pass(&targets, &sources, &mut nnf, &params, &mut rng)?;

            buffer.clear();
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (t, e) in nnf.iter().enumerate() {
                groups.entry(e.source).or_default().push(t);
            }
            {
                let tex = state.texture();
                for (&s, ts) in &groups {
                    hooks.check()?;
                    let (sg, _) = builder.build(source_vertices[s], r);
                    for &t in ts {
                        splat(&mut buffer, &state.atlas, &target_gpms[t], &sg, &tex, nnf[t].angle(&params), 0.5 * r);
                    }
                }
            }
            let votes = buffer.finalize();
            let vote_roles = roles(&state.atlas, |p| if buffer.weight[p] > 0.0 { 1 } else { 3 });
            let mut blended = state.blender.screened_poisson(w, h, &vote_roles, &votes, &state.collar, cfg.poisson_weight)?;
            let unvoted = vote_roles.iter().filter(|&&r| r == 3).count();
            if unvoted > 0 {
                let fill_roles: Vec<u8> = vote_roles
                    .iter()
                    .map(|&r| match r {
                        3 => 1,
                        0 => 0,
                        _ => 2,
                    })
                    .collect();
                let known: Vec<[f32; 3]> = (0..w * h)
                    .map(|p| if vote_roles[p] == 1 { blended[p] } else { state.collar[p] })
                    .collect();
                let filled = Blender::default().harmonic_fill(w, h, &fill_roles, &known, mean)?;
                for p in 0..w * h {
                    if fill_roles[p] == 1 {
                        blended[p] = filled[p];
                    }
                }
                if iteration == 0 {
                    warnings.push(format!("{unvoted} target pixels received no votes at radius {r:.4}; filled by diffusion"));
                }
            }
            state.store(&blended);

            targets.signatures = sample_targets(&state);
            refresh(&targets, &sources, &mut nnf, &params);
            let updated = total_energy(&nnf);
            report.pass_energies.push((searched, updated));
            if let Some(cb) = hooks.progress {
                cb(Progress {
                    scale: si,
                    scales: radii.len(),
                    radius: r,
                    iteration,
                    energy: updated,
                });
            }
            let change = (energy - updated).abs() / energy.max(1e-12);
            energy = updated;
            if energy <= 1e-12 || change < cfg.tolerance {
                break;
            }
        }
        previous = nnf.iter().enumerate().map(|(t, e)| (target_vertices[t], source_vertices[e.source])).collect();
        last_nnf = Some((nnf, source_vertices));
        scales.push(report);
    }
    if !any_scale {
        return Err(Error::EmptySource);
    }

    let mut page = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let p = state.page.pixel(x, y);
            page.put_pixel(x as u32, y as u32, Rgb(lab_to_rgb([p[0], p[1], p[2]])));
        }
    }
    let debug = cfg.debug.then(|| {
        let votes = buffer.finalize();
        let mut vimg = RgbImage::new(w as u32, h as u32);
        let mut nimg = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if buffer.weight[p] > 0.0 {
                    let v = votes[p];
                    vimg.put_pixel(x as u32, y as u32, Rgb(lab_to_rgb([v[0], v[1], v[2]])));
                }
                if let (Some(o), Some((nnf, sv))) = (state.atlas.owner[p], &last_nnf) {
                    let chart = &state.atlas.charts[o.chart as usize];
                    if !chart.is_target[o.local as usize] {
                        continue;
                    }
                    let f = chart.faces[o.local as usize];
                    let corner = (0..3).max_by(|&a, &b| o.bary[a].total_cmp(&o.bary[b])).unwrap();
                    let v = mesh.faces()[f][corner];
                    if let Some(&t) = target_index.get(&v) {
                        let s = sv[nnf[t].source] as u64;
                        let hash = s.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                        nimg.put_pixel(x as u32, y as u32, Rgb([(hash >> 56) as u8, (hash >> 48) as u8, (hash >> 40) as u8]));
                    }
                }
            }
        }
        DebugImages { votes: vimg, nnf: nimg }
    });

    let mut out = tm.clone();
    for f in 0..mesh.face_count() {
        if let Some(uv) = state.atlas.target_uv(f) {
            out.uv[f] = uv;
            out.page[f] = 1;
            out.flags[f] = FaceFlag::Inpainted;
            out.mirror_of[f] = None;
        }
    }
    Ok(InpaintOutput {
        mesh: out,
        page: Some(page),
        scales,
        warnings,
        debug,
    })
}

/// Lab color at every vertex whose incident faces all share one role:
/// filled faces read the inpainting page, others the drawing.
pub fn vertex_colors(tm: &TexturedMesh, drawing: &Planes, page: Option<&Planes>) -> Vec<Option<(bool, [f32; 3])>> {
    let mesh = &tm.mesh;
    (0..mesh.vertex_count())
        .map(|v| {
            let faces = mesh.vertex_faces(v);
            let &f = faces.first()?;
            let filled = tm.page[f] == 1;
            if faces.iter().any(|&g| (tm.page[g] == 1) != filled) {
                return None;
            }
            let k = mesh.faces()[f].iter().position(|&u| u == v)?;
            let img = if filled { page? } else { drawing };
            let mut px = [0f32; 3];
            img.sample(&tm.uv[f][k], &mut px);
            Some((filled, px))
        })
        .collect()
}

/// Normalized autocorrelation of the mean of `samples` binned by their
/// first coordinate, at a lag of `lag` bins.
pub fn binned_autocorrelation(samples: &[(f64, f64)], lo: f64, hi: f64, bins: usize, lag: usize) -> f64 {
    let mut sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for &(x, y) in samples {
        let b = (((x - lo) / (hi - lo)) * bins as f64).floor();
        if b >= 0.0 && (b as usize) < bins {
            sum[b as usize] += y;
            count[b as usize] += 1;
        }
    }
    let means: Vec<Option<f64>> = sum.iter().zip(&count).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect();
    let present: Vec<f64> = means.iter().flatten().copied().collect();
    let mu = present.iter().sum::<f64>() / present.len().max(1) as f64;
    let var = present.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / present.len().max(1) as f64;
    let mut acc = 0.0;
    let mut pairs = 0;
    for i in 0..bins.saturating_sub(lag) {
        if let (Some(a), Some(b)) = (means[i], means[i + lag]) {
            acc += (a - mu) * (b - mu);
            pairs += 1;
        }
    }
    if pairs == 0 || var == 0.0 {
        return 0.0;
    }
    acc / pairs as f64 / var
}
