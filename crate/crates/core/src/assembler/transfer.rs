//! Texture transfer between parts through disk maps of their front halves.

use std::collections::BTreeMap;

use super::idsc::{match_contours, BoundaryMap, ContourMatch, IdscParams};
use crate::error::{Error, Result};
use crate::geometry::polygon::{arc_lengths, signed_area};
use crate::geometry::{project, Bvh, Half, Point2, Point3, SymmetricPartMesh};
use crate::texturer::{half_region, harmonic_extension, mirror_texture, FaceFlag, TexturedPart};

/// Options for [`transfer_texture`].
#[derive(Default)]
pub struct TransferOptions<'a> {
    /// Junction regions of the target and source outlines in drawing
    /// coordinates.
    pub junctions: Option<(&'a dyn Fn(&Point2) -> bool, &'a dyn Fn(&Point2) -> bool)>,
    /// User key pairs as (target, source) midline parameters in `[0, 1)`.
    /// When present they replace the automatic match.
    pub key_pairs: Vec<(f64, f64)>,
    pub idsc: IdscParams,
}

/// Midline of a part as a counterclockwise drawing-plane loop: the vertex
/// order and the projected points.
pub fn midline_loop(part: &SymmetricPartMesh) -> (Vec<usize>, Vec<Point2>) {
    let mut order = part.midline.clone();
    let mut pts: Vec<Point2> = order.iter().map(|&v| project(&part.mesh.positions()[v])).collect();
    if signed_area(&pts) < 0.0 {
        order.reverse();
        pts.reverse();
        // keep the starting vertex
        order.rotate_right(1);
        pts.rotate_right(1);
    }
    (order, pts)
}

/// Harmonic map of the front half onto the unit disk. The midline goes to
/// the circle by arc length of its projection, starting at angle zero.
pub fn disk_map(part: &SymmetricPartMesh) -> Result<Vec<Point2>> {
    let (order, pts) = midline_loop(part);
    let cum = arc_lengths(&pts, true);
    let total = *cum.last().unwrap();
    if order.len() < 3 || total <= 0.0 {
        return Err(Error::InvalidMesh("midline loop is degenerate".into()));
    }
    let fixed: BTreeMap<usize, Point2> = order
        .iter()
        .zip(&cum)
        .map(|(&v, s)| {
            let a = std::f64::consts::TAU * s / total;
            (v, Point2::new(a.cos(), a.sin()))
        })
        .collect();
    harmonic_extension(&part.mesh, &half_region(part, Half::Front), &fixed)
}

/// Copies the texture of `source` onto `target`. Each front-half vertex of
/// the target is sent through its disk map, the boundary correspondence
/// and the inverse source disk map to a source surface point whose UV it
/// takes. The back half mirrors the front. All faces are flagged mirrored.
pub fn transfer_texture(
    target: &SymmetricPartMesh,
    source: &TexturedPart,
    opts: &TransferOptions,
) -> Result<(TexturedPart, ContourMatch)> {
    let (_, tpts) = midline_loop(target);
    let (_, spts) = midline_loop(&source.part);
    let m = match_contours(&tpts, &spts, opts.junctions, &opts.idsc)?;
    let m = if opts.key_pairs.is_empty() {
        m
    } else {
        ContourMatch {
            map: BoundaryMap::through(&opts.key_pairs)?,
            ..m
        }
    };

    let tdisk = disk_map(target)?;
    let sdisk = disk_map(&source.part)?;
    let sregion = half_region(&source.part, Half::Front);
    let sfaces: Vec<[usize; 3]> = source
        .part
        .mesh
        .faces()
        .iter()
        .copied()
        .filter(|f| f.iter().all(|&v| sregion[v]))
        .collect();
    let flat: Vec<Point3> = sdisk.iter().map(|p| Point3::new(p.x, p.y, 0.0)).collect();
    let bvh = Bvh::new(&flat, &sfaces);

    let tregion = half_region(target, Half::Front);
    let mut uv = vec![Point2::zeros(); target.mesh.vertex_count()];
    for v in 0..uv.len() {
        if !tregion[v] {
            continue;
        }
        let p = tdisk[v];
        let rho = p.norm().min(1.0);
        let t = p.y.atan2(p.x).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
        let a = std::f64::consts::TAU * m.map.eval(t);
        let q = Point3::new(rho * a.cos(), rho * a.sin(), 0.0);
        let hit = bvh.closest_point(&q).ok_or_else(|| Error::InvalidMesh("source half has no faces".into()))?;
        let f = sfaces[hit.face];
        uv[v] = (0..3).map(|k| source.uv[f[k]] * hit.bary[k]).sum();
    }
    let mut out = mirror_texture(target, Half::Front, &uv);
    // copied from another part, so never depth-tested against the drawing
    out.flags = vec![FaceFlag::Mirrored; out.flags.len()];
    Ok((out, m))
}
