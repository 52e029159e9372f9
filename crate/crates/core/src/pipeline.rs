//! Stage-by-stage orchestration of a project, from outlines to the final
//! textured mesh.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::assembler::merge::{merge_parts, MergeOutput, MergePart};
use crate::assembler::position::{biased_position, central_position, shift_plane, PlacedPart};
use crate::assembler::transfer::{transfer_texture, TransferOptions};
use crate::error::{Error, Result};
use crate::export::{export_obj, ExportFiles};
use crate::geometry::polygon;
use crate::geometry::{Plane, Point2, SymmetricPartMesh};
use crate::inpaint::{inpaint, Hooks, InpaintOutput};
use crate::optimizer::{shape_part_with, ShapeConfig, ShapedPart};
use crate::part_builder::{build_part, canonical_outline, rotation_from_annotations, RotationSpec};
use crate::project::{sha256_hex, LoadedProject, Pairing, PartRecord, Stage};
use crate::texturer::{detect_ill_textured, texture_part, DrawingFrame, TexturedMesh, TexturedPart};

/// Where a part ended up in depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartPlacement {
    /// Part it was placed against; `None` for the root.
    pub parent: Option<usize>,
    pub dz: f64,
    pub plane: Plane,
}

/// Flat mesh arrays for viewers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreviewMesh {
    pub positions: Vec<f64>,
    pub faces: Vec<u32>,
    /// Two values per face corner.
    pub uvs: Vec<f64>,
    /// Texture page of each face.
    pub pages: Vec<u8>,
}

impl PreviewMesh {
    pub fn from_textured(meshes: &[TexturedMesh]) -> Self {
        let mut out = PreviewMesh {
            positions: Vec::new(),
            faces: Vec::new(),
            uvs: Vec::new(),
            pages: Vec::new(),
        };
        for tm in meshes {
            let base = (out.positions.len() / 3) as u32;
            out.positions.extend(tm.mesh.positions().iter().flat_map(|p| [p.x, p.y, p.z]));
            out.faces.extend(tm.mesh.faces().iter().flatten().map(|&v| base + v as u32));
            out.uvs.extend(tm.uv.iter().flatten().flat_map(|p| [p.x, p.y]));
            out.pages.extend_from_slice(&tm.page);
        }
        out
    }
}

/// Per-part shaping summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSummary {
    pub id: String,
    pub vertices: usize,
    pub faces: usize,
    pub plane: Plane,
    pub energy: f64,
    pub warnings: Vec<String>,
}

/// A project with the artifacts of the stages run so far.
pub struct Pipeline {
    pub project: LoadedProject,
    pub drawing: RgbImage,
    pub frame: DrawingFrame,
    pub built: Vec<SymmetricPartMesh>,
    pub shaped: Vec<ShapedPart>,
    pub textured: Vec<TexturedPart>,
    pub placements: Vec<PartPlacement>,
    /// Textured parts moved to their depth, far parts carrying transferred
    /// textures once that stage ran.
    pub placed: Vec<TexturedPart>,
    pub connections: Vec<(usize, usize)>,
    pub merged: Option<MergeOutput>,
    pub result: Option<InpaintOutput>,
    pub warnings: Vec<String>,
    done: BTreeMap<Stage, String>,
    built_cache: BTreeMap<String, SymmetricPartMesh>,
    shape_cache: BTreeMap<String, ShapedPart>,
}

fn fingerprint(prev: &str, value: &serde_json::Value) -> String {
    sha256_hex(format!("{prev}\n{value}").as_bytes())
}

fn stage_error(part: &PartRecord, e: Error, hint: &str) -> Error {
    match e {
        Error::Stage { .. } | Error::Cancelled => e,
        e => Error::Stage {
            part: part.id.clone(),
            message: e.to_string(),
            hint: hint.into(),
        },
    }
}

impl Pipeline {
    pub fn new(project: LoadedProject) -> Result<Self> {
        let drawing = image::load_from_memory(&project.image_bytes)?.to_rgb8();
        let frame = DrawingFrame::new(drawing.width(), drawing.height());
        Ok(Self {
            project,
            drawing,
            frame,
            built: Vec::new(),
            shaped: Vec::new(),
            textured: Vec::new(),
            placements: Vec::new(),
            placed: Vec::new(),
            connections: Vec::new(),
            merged: None,
            result: None,
            warnings: Vec::new(),
            done: BTreeMap::new(),
            built_cache: BTreeMap::new(),
            shape_cache: BTreeMap::new(),
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::new(crate::project::load_project(path)?)
    }

    /// Latest stage whose artifacts are current.
    pub fn stage(&self) -> Stage {
        Stage::ALL
            .into_iter()
            .take_while(|s| *s == Stage::Annotated || self.done.get(s) == Some(&self.fingerprint(*s)))
            .last()
            .unwrap_or(Stage::Annotated)
    }

    fn stage_inputs(&self, stage: Stage) -> serde_json::Value {
        let f = &self.project.file;
        let parts = &f.parts;
        match stage {
            Stage::Annotated => json!({"image": f.image.sha256}),
            Stage::Triangulated => json!({
                "faces": f.config.shape.target_faces,
                "outlines": parts.iter().map(|p| json!([p.id, p.annotations])).collect::<Vec<_>>(),
            }),
            Stage::Optimized => json!({
                "shape": f.config.shape,
                "root": f.root,
                "parts": parts.iter().map(|p| json!([p.weights, p.pairing, p.pose.plane])).collect::<Vec<_>>(),
            }),
            Stage::Textured => json!(null),
            Stage::Positioned => json!({
                "parts": parts.iter().map(|p| json!([p.parent, p.pose])).collect::<Vec<_>>(),
            }),
            Stage::Transferred => json!({
                "idsc": f.config.idsc,
                "keys": parts.iter().map(|p| json!(p.key_pairs)).collect::<Vec<_>>(),
            }),
            Stage::Merged => json!(f.config.merge),
            Stage::Inpainted => json!({"ill": f.config.ill, "inpaint": f.config.inpaint, "seed": f.seed}),
            Stage::Complete => json!(null),
        }
    }

    /// Cumulative fingerprint of everything `stage` depends on.
    pub fn fingerprint(&self, stage: Stage) -> String {
        let mut fp = String::new();
        for s in Stage::ALL {
            fp = fingerprint(&fp, &self.stage_inputs(s));
            if s == stage {
                break;
            }
        }
        fp
    }

    /// Runs every stage up to `until`, skipping stages whose inputs did not
    /// change since they last ran, and records checkpoints in the project.
    pub fn run(&mut self, until: Stage, hooks: Hooks) -> Result<()> {
        let outcome = self.run_stages(until, hooks);
        self.sync_checkpoints();
        outcome
    }

    /// Records the current stage and the fingerprints of the stages that
    /// are still current in the project file.
    pub fn sync_checkpoints(&mut self) {
        let current = self.stage();
        self.project.file.stage = current;
        self.project.file.checkpoints = self.done.iter().filter(|(s, _)| **s <= current).map(|(s, f)| (*s, f.clone())).collect();
    }

    fn run_stages(&mut self, until: Stage, hooks: Hooks) -> Result<()> {
        self.project.file.validate()?;
        for stage in Stage::ALL {
            if stage > until {
                break;
            }
            let fp = self.fingerprint(stage);
            if self.done.get(&stage) == Some(&fp) {
                log::debug!("{stage} is current");
                continue;
            }
            self.done.retain(|s, _| *s < stage);
            let started = std::time::Instant::now();
            match stage {
                Stage::Annotated => {}
                Stage::Triangulated => self.triangulate()?,
                Stage::Optimized => self.optimize()?,
                Stage::Textured => self.texture()?,
                Stage::Positioned => self.position()?,
                Stage::Transferred => self.transfer()?,
                Stage::Merged => self.merge()?,
                Stage::Inpainted => self.fill(hooks)?,
                Stage::Complete => {}
            }
            log::info!("{stage} in {:.2?}", started.elapsed());
            self.done.insert(stage, fp);
        }
        Ok(())
    }

    fn part_key(&self, i: usize, extra: &serde_json::Value) -> String {
        let p = &self.project.file.parts[i];
        fingerprint(&self.project.file.config.shape.target_faces.to_string(), &json!([p.annotations, extra]))
    }

    fn triangulate(&mut self) -> Result<()> {
        let parts = &self.project.file.parts;
        let faces = self.project.file.config.shape.target_faces;
        let keys: Vec<String> = (0..parts.len()).map(|i| self.part_key(i, &json!(null))).collect();
        let cache = &self.built_cache;
        let built: Vec<Result<SymmetricPartMesh>> = parts
            .par_iter()
            .zip(&keys)
            .map(|(p, k)| match cache.get(k) {
                Some(m) => Ok(m.clone()),
                None => build_part(&p.annotations, faces)
                    .map_err(|e| stage_error(p, e, "redraw the outline as a simple closed curve")),
            })
            .collect();
        self.built = built.into_iter().collect::<Result<_>>()?;
        self.built_cache = keys.into_iter().zip(self.built.iter().cloned()).collect();
        Ok(())
    }

    /// Symmetry-plane rotation of every part. Paired parts take their
    /// parent's plane normal.
    fn rotations(&self) -> Result<Vec<Option<RotationSpec>>> {
        let parts = &self.project.file.parts;
        let own = |p: &PartRecord| -> Result<Option<RotationSpec>> {
            if let Some(plane) = &p.pose.plane {
                let c = polygon::centroid(&canonical_outline(&p.annotations.outline)?);
                return Ok(Some(RotationSpec::toward(&plane.normal, &c)));
            }
            match rotation_from_annotations(&p.annotations) {
                Ok(r) => Ok(Some(r)),
                Err(Error::NoRotationCue) => Ok(None),
                Err(e) => Err(stage_error(p, e, "fix the landmarks or rotation segment")),
            }
        };
        parts
            .iter()
            .map(|p| match &p.pairing {
                Pairing::Solo => own(p),
                Pairing::Near { parent, .. } | Pairing::Far { parent, .. } => {
                    let k = &parts[self.project.file.part_index(parent).expect("validated")];
                    let normal = own(k)?.map(|r| r.normal()).unwrap_or_else(crate::geometry::Point3::z);
                    let c = polygon::centroid(&canonical_outline(&p.annotations.outline)?);
                    Ok(Some(RotationSpec::toward(&normal, &c)))
                }
            })
            .collect()
    }

    fn optimize(&mut self) -> Result<()> {
        let rotations = self.rotations()?;
        let file = &self.project.file;
        let keys: Vec<String> = (0..file.parts.len())
            .map(|i| {
                let p = &file.parts[i];
                self.part_key(i, &json!([file.config.shape, p.weights, rotations[i]]))
            })
            .collect();
        let cache = &self.shape_cache;
        let shaped: Vec<Result<ShapedPart>> = file
            .parts
            .par_iter()
            .zip(&keys)
            .zip(&rotations)
            .map(|((p, k), rot)| {
                if let Some(s) = cache.get(k) {
                    return Ok(s.clone());
                }
                let mut cfg: ShapeConfig = file.config.shape;
                if let Some(w) = p.weights {
                    cfg.optimizer.weights = w;
                }
                shape_part_with(&p.annotations, &cfg, *rot)
                    .map_err(|e| stage_error(p, e, "adjust the midline, landmarks or rotation segment"))
            })
            .collect();
        self.shaped = shaped.into_iter().collect::<Result<_>>()?;
        for (p, s) in file.parts.iter().zip(&self.shaped) {
            self.warnings.extend(s.warnings.iter().map(|w| format!("{}: {w}", p.id)));
        }
        self.shape_cache = keys.into_iter().zip(self.shaped.iter().cloned()).collect();
        Ok(())
    }

    /// Shapes one part with the current settings, using the cache.
    pub fn shape_one(&mut self, id: &str) -> Result<(ShapedPart, PartSummary)> {
        let i = self
            .project
            .file
            .part_index(id)
            .ok_or_else(|| Error::InvalidProject(format!("no part `{id}`")))?;
        self.project.file.validate()?;
        let rotations = self.rotations()?;
        let file = &self.project.file;
        let p = &file.parts[i];
        let key = self.part_key(i, &json!([file.config.shape, p.weights, rotations[i]]));
        let shaped = match self.shape_cache.get(&key) {
            Some(s) => s.clone(),
            None => {
                let mut cfg = file.config.shape;
                if let Some(w) = p.weights {
                    cfg.optimizer.weights = w;
                }
                let s = shape_part_with(&p.annotations, &cfg, rotations[i])
                    .map_err(|e| stage_error(p, e, "adjust the midline, landmarks or rotation segment"))?;
                self.shape_cache.insert(key, s.clone());
                s
            }
        };
        let summary = PartSummary {
            id: p.id.clone(),
            vertices: shaped.part.mesh.vertex_count(),
            faces: shaped.part.mesh.face_count(),
            plane: shaped.part.plane,
            energy: shaped.reports.last().map(|r| r.after.total).unwrap_or(0.0),
            warnings: shaped.warnings.clone(),
        };
        Ok((shaped, summary))
    }

    fn texture(&mut self) -> Result<()> {
        let parts = &self.project.file.parts;
        let frame = self.frame;
        let textured: Vec<Result<TexturedPart>> = self
            .shaped
            .par_iter()
            .zip(parts)
            .map(|(s, p)| texture_part(&s.part, &frame).map_err(|e| stage_error(p, e, "keep the outline inside the image")))
            .collect();
        self.textured = textured.into_iter().collect::<Result<_>>()?;
        Ok(())
    }

    fn position(&mut self) -> Result<()> {
        let file = &self.project.file;
        let parts = &file.parts;
        let n = parts.len();
        let root = file.root_index()?;
        let hint = "draw the outline overlapping its parent or set a depth offset";
        let placed_part = |i: usize, dz: f64| {
            let t = &self.textured[i];
            PlacedPart::new(parts[i].id.clone(), parts[i].annotations.outline.clone(), t.part.mesh.clone(), t.part.plane)
                .shifted(dz)
        };
        let mut out: Vec<Option<PartPlacement>> = vec![None; n];
        let mut placed: Vec<Option<PlacedPart>> = vec![None; n];
        let pose_dz = |i: usize, inferred: f64, plane: &Plane| -> f64 {
            // an explicit plane fixes the depth at the outline centroid
            let c = polygon::centroid(&parts[i].annotations.outline);
            let fixed = parts[i].pose.plane.and_then(|want| {
                let have = shift_plane(plane, inferred);
                Some(want.depth_at(&c)? - have.depth_at(&c)?)
            });
            inferred + fixed.unwrap_or(0.0) + parts[i].pose.depth_offset
        };
        let root_dz = pose_dz(root, 0.0, &self.textured[root].part.plane);
        out[root] = Some(PartPlacement {
            parent: None,
            dz: root_dz,
            plane: shift_plane(&self.textured[root].part.plane, root_dz),
        });
        placed[root] = Some(placed_part(root, root_dz));
        loop {
            let mut progress = false;
            for i in 0..n {
                if out[i].is_some() {
                    continue;
                }
                let p = &parts[i];
                let parent = p.declared_parent().map(|id| file.part_index(id).expect("validated"));
                if parent.is_some_and(|k| placed[k].is_none()) {
                    continue;
                }
                match &p.pairing {
                    Pairing::Solo => {
                        let (pool, index): (Vec<PlacedPart>, Vec<usize>) = match parent {
                            Some(k) => (vec![placed[k].clone().unwrap()], vec![k]),
                            None => (0..n).filter_map(|k| Some((placed[k].clone()?, k))).unzip(),
                        };
                        let me = placed_part(i, 0.0);
                        let pl = central_position(&me, &pool).map_err(|e| stage_error(p, e, hint))?;
                        let dz = pose_dz(i, pl.dz, &me.plane);
                        out[i] = Some(PartPlacement {
                            parent: Some(index[pl.parent]),
                            dz,
                            plane: shift_plane(&me.plane, dz),
                        });
                        placed[i] = Some(me.shifted(dz));
                    }
                    Pairing::Near { partner, .. } | Pairing::Far { partner, .. } => {
                        let j = file.part_index(partner).expect("validated");
                        let k = parent.expect("pairs have parents");
                        let (near, far) = if matches!(p.pairing, Pairing::Near { .. }) { (i, j) } else { (j, i) };
                        let (pn, pf) = (placed_part(near, 0.0), placed_part(far, 0.0));
                        let (dn, df) = biased_position(&pn, &pf, placed[k].as_ref().unwrap())
                            .map_err(|e| stage_error(&parts[near], e, hint))?;
                        for (idx, me, d) in [(near, pn, dn), (far, pf, df)] {
                            let dz = pose_dz(idx, d, &me.plane);
                            out[idx] = Some(PartPlacement {
                                parent: Some(k),
                                dz,
                                plane: shift_plane(&me.plane, dz),
                            });
                            placed[idx] = Some(me.shifted(dz));
                        }
                    }
                }
                progress = true;
            }
            if out.iter().all(Option::is_some) {
                break;
            }
            if !progress {
                let i = out.iter().position(Option::is_none).unwrap();
                return Err(stage_error(&parts[i], Error::Disconnected(parts[i].id.clone()), hint));
            }
        }
        self.placements = out.into_iter().map(Option::unwrap).collect();
        self.connections = self
            .placements
            .iter()
            .enumerate()
            .filter_map(|(i, p)| Some((i, p.parent?)))
            .collect();
        self.placed = self
            .textured
            .iter()
            .zip(&self.placements)
            .map(|(t, pl)| {
                let mut t = t.clone();
                for q in t.part.mesh.positions_mut() {
                    q.z += pl.dz;
                }
                t.part.plane = pl.plane;
                t
            })
            .collect();
        Ok(())
    }

    fn transfer(&mut self) -> Result<()> {
        let file = &self.project.file;
        // restart from the positioned textures
        for (i, pl) in self.placements.iter().enumerate() {
            if let Pairing::Far { .. } = file.parts[i].pairing {
                let mut t = self.textured[i].clone();
                for q in t.part.mesh.positions_mut() {
                    q.z += pl.dz;
                }
                t.part.plane = pl.plane;
                self.placed[i] = t;
            }
        }
        for (i, p) in file.parts.iter().enumerate() {
            let Pairing::Far { partner, parent } = &p.pairing else {
                continue;
            };
            let j = file.part_index(partner).expect("validated");
            let k = file.part_index(parent).expect("validated");
            let parent_outline = canonical_outline(&file.parts[k].annotations.outline)?;
            let inside = |q: &Point2| polygon::contains(&parent_outline, q);
            let opts = TransferOptions {
                junctions: Some((&inside, &inside)),
                key_pairs: p.key_pairs.iter().map(|k| (k[0], k[1])).collect(),
                idsc: file.config.idsc,
            };
            let (t, _) = transfer_texture(&self.placed[i].part, &self.placed[j], &opts)
                .map_err(|e| stage_error(p, e, "add key pairs between the paired parts"))?;
            self.placed[i] = t;
        }
        Ok(())
    }

    fn merge(&mut self) -> Result<()> {
        let file = &self.project.file;
        let parts: Vec<MergePart> = self
            .placed
            .iter()
            .zip(&file.parts)
            .map(|(t, p)| MergePart {
                name: p.id.clone(),
                mesh: t.to_mesh(),
            })
            .collect();
        let out = merge_parts(&parts, &self.connections, file.root_index()?, &file.config.merge)?;
        self.warnings.extend(out.warnings.iter().cloned());
        self.merged = Some(out);
        Ok(())
    }

    fn fill(&mut self, hooks: Hooks) -> Result<()> {
        let merged = self.merged.as_ref().ok_or(Error::NothingToExport)?;
        let mut tm = merged.mesh.clone();
        detect_ill_textured(&mut tm, &self.project.file.config.ill);
        let mut cfg = self.project.file.config.inpaint.clone();
        cfg.seed = self.project.file.seed;
        let out = inpaint(&tm, &self.drawing, &cfg, hooks)?;
        self.warnings.extend(out.warnings.iter().cloned());
        self.result = Some(out);
        Ok(())
    }

    /// The final mesh, if the pipeline got that far.
    pub fn final_mesh(&self) -> Option<&TexturedMesh> {
        self.result.as_ref().map(|r| &r.mesh)
    }

    /// Mesh arrays of the given stage's artifact.
    pub fn preview(&self, stage: Stage) -> Result<PreviewMesh> {
        let missing = || Error::InvalidProject(format!("stage {stage} has not run"));
        if stage > self.stage() {
            return Err(missing());
        }
        let parts = |v: &[TexturedPart]| PreviewMesh::from_textured(&v.iter().map(TexturedPart::to_mesh).collect::<Vec<_>>());
        let untextured = |meshes: Vec<&SymmetricPartMesh>| {
            let tms: Vec<TexturedMesh> = meshes
                .into_iter()
                .map(|m| {
                    let n = m.mesh.face_count();
                    TexturedMesh {
                        mesh: m.mesh.clone(),
                        uv: vec![[Point2::zeros(); 3]; n],
                        page: vec![0; n],
                        flags: vec![crate::texturer::FaceFlag::Ill; n],
                        mirror_of: vec![None; n],
                    }
                })
                .collect();
            PreviewMesh::from_textured(&tms)
        };
        Ok(match stage {
            Stage::Annotated => return Err(missing()),
            Stage::Triangulated => untextured(self.built.iter().collect()),
            Stage::Optimized => untextured(self.shaped.iter().map(|s| &s.part).collect()),
            Stage::Textured => parts(&self.textured),
            Stage::Positioned | Stage::Transferred => parts(&self.placed),
            Stage::Merged => PreviewMesh::from_textured(&[self.merged.as_ref().ok_or_else(missing)?.mesh.clone()]),
            Stage::Inpainted | Stage::Complete => PreviewMesh::from_textured(&[self.final_mesh().ok_or_else(missing)?.clone()]),
        })
    }

    /// Writes the final mesh with its texture pages into `dir`.
    pub fn export(&self, dir: &Path) -> Result<ExportFiles> {
        let out = self.result.as_ref().ok_or(Error::NothingToExport)?;
        let mut pages = vec![&self.drawing];
        if let Some(p) = &out.page {
            pages.push(p);
        }
        export_obj(dir, "character", &out.mesh, &pages)
    }

    /// Energy of each shaped part at its current positions.
    pub fn part_energies(&self) -> Vec<f64> {
        self.shaped
            .iter()
            .map(|s| s.reports.last().map(|r| r.after.total).unwrap_or(0.0))
            .collect()
    }
}
