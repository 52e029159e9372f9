//! Wavefront OBJ export with a material per texture page, and a reader
//! for checking exports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::{vertex_area_normal, Point2, Point3};
use crate::texturer::TexturedMesh;

/// Paths written by [`export_obj`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExportFiles {
    pub mesh: PathBuf,
    pub material: PathBuf,
    pub pages: Vec<PathBuf>,
}

fn page_name(stem: &str, k: usize) -> String {
    format!("{stem}_page{k}.png")
}

/// OBJ text for a textured mesh. UV corners shared by faces are written
/// once; faces are grouped by page.
pub fn obj_text(tm: &TexturedMesh, stem: &str, pages: usize) -> String {
    let mesh = &tm.mesh;
    let mut out = String::new();
    let _ = writeln!(out, "mtllib {stem}.mtl");
    let _ = writeln!(out, "o {stem}");
    for p in mesh.positions() {
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
    }
    let normals: Vec<Point3> = match vertex_area_normal(mesh) {
        Ok(n) => n.into_iter().map(|(_, n)| n).collect(),
        Err(_) => vec![Point3::z(); mesh.vertex_count()],
    };
    for n in &normals {
        let _ = writeln!(out, "vn {} {} {}", n.x, n.y, n.z);
    }
    let mut uv_index = std::collections::BTreeMap::new();
    let mut uvs: Vec<Point2> = Vec::new();
    let mut corner_uv = vec![[0usize; 3]; mesh.face_count()];
    for (f, corners) in tm.uv.iter().enumerate() {
        for k in 0..3 {
            let key = (corners[k].x.to_bits(), corners[k].y.to_bits());
            corner_uv[f][k] = *uv_index.entry(key).or_insert_with(|| {
                uvs.push(corners[k]);
                uvs.len() - 1
            });
        }
    }
    for t in &uvs {
        let _ = writeln!(out, "vt {} {}", t.x, t.y);
    }
    for page in 0..pages.max(1) {
        let faces: Vec<usize> = (0..mesh.face_count())
            .filter(|&f| tm.page[f] as usize == page || (page == 0 && tm.page[f] as usize >= pages))
            .collect();
        if faces.is_empty() {
            continue;
        }
        let _ = writeln!(out, "usemtl page{page}");
        for f in faces {
            let v = mesh.faces()[f];
            let t = corner_uv[f];
            let _ = writeln!(
                out,
                "f {}/{}/{} {}/{}/{} {}/{}/{}",
                v[0] + 1,
                t[0] + 1,
                v[0] + 1,
                v[1] + 1,
                t[1] + 1,
                v[1] + 1,
                v[2] + 1,
                t[2] + 1,
                v[2] + 1
            );
        }
    }
    out
}

fn mtl_text(stem: &str, pages: usize) -> String {
    let mut out = String::new();
    for k in 0..pages {
        let _ = writeln!(out, "newmtl page{k}");
        let _ = writeln!(out, "Ka 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1");
        let _ = writeln!(out, "map_Kd {}", page_name(stem, k));
        out.push('\n');
    }
    out
}

/// Writes `<stem>.obj`, `<stem>.mtl` and one PNG per page into `dir`.
pub fn export_obj(dir: &Path, stem: &str, tm: &TexturedMesh, pages: &[&RgbImage]) -> Result<ExportFiles> {
    if tm.face_count() == 0 {
        return Err(Error::NothingToExport);
    }
    std::fs::create_dir_all(dir)?;
    let mesh = dir.join(format!("{stem}.obj"));
    let material = dir.join(format!("{stem}.mtl"));
    std::fs::write(&mesh, obj_text(tm, stem, pages.len()))?;
    std::fs::write(&material, mtl_text(stem, pages.len()))?;
    let mut written = Vec::new();
    for (k, img) in pages.iter().enumerate() {
        let path = dir.join(page_name(stem, k));
        img.save_with_format(&path, image::ImageFormat::Png)?;
        written.push(path);
    }
    Ok(ExportFiles {
        mesh,
        material,
        pages: written,
    })
}

/// The parts of an OBJ file this crate writes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjMesh {
    pub positions: Vec<Point3>,
    pub uvs: Vec<Point2>,
    /// Per corner `(position, uv)` indices, zero-based.
    pub faces: Vec<[(usize, Option<usize>); 3]>,
    /// Material name of each face.
    pub materials: Vec<Option<String>>,
}

/// Parses triangles, positions, UVs and material switches.
pub fn parse_obj(text: &str) -> Result<ObjMesh> {
    let mut m = ObjMesh::default();
    let mut material = None;
    for (ln, line) in text.lines().enumerate() {
        let err = |msg: &str| Error::Parse {
            line: ln + 1,
            column: 1,
            message: msg.to_string(),
        };
        let mut it = line.split_whitespace();
        let nums = |it: std::str::SplitWhitespace, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = it.map(|s| s.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| err("bad number"))?;
            if v.len() < n {
                return Err(err("too few coordinates"));
            }
            Ok(v)
        };
        match it.next() {
            Some("v") => {
                let v = nums(it, 3)?;
                m.positions.push(Point3::new(v[0], v[1], v[2]));
            }
            Some("vt") => {
                let v = nums(it, 2)?;
                m.uvs.push(Point2::new(v[0], v[1]));
            }
            Some("usemtl") => material = it.next().map(str::to_string),
            Some("f") => {
                let corners: Vec<(usize, Option<usize>)> = it
                    .map(|c| {
                        let mut parts = c.split('/');
                        let v = parts.next().and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| err("bad face"))?;
                        let t = parts.next().filter(|s| !s.is_empty()).map(|s| s.parse::<usize>().map_err(|_| err("bad face")));
                        Ok((v - 1, t.transpose()?.map(|t| t - 1)))
                    })
                    .collect::<Result<_>>()?;
                if corners.len() != 3 {
                    return Err(err("only triangles are supported"));
                }
                m.faces.push([corners[0], corners[1], corners[2]]);
                m.materials.push(material.clone());
            }
            _ => {}
        }
    }
    Ok(m)
}
