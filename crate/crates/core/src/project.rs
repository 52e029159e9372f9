//! The project file: drawing reference, per-part annotations, pairing,
//! pose overrides and pipeline settings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::assembler::idsc::IdscParams;
use crate::assembler::merge::MergeConfig;
use crate::error::{Error, Result};
use crate::geometry::Plane;
use crate::inpaint::InpaintConfig;
use crate::optimizer::{EnergyWeights, ShapeConfig};
use crate::part_builder::AnnotationSet;
use crate::texturer::IllConfig;

/// Newest schema version this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    Annotated,
    Triangulated,
    Optimized,
    Textured,
    Positioned,
    Transferred,
    Merged,
    Inpainted,
    Complete,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Annotated,
        Stage::Triangulated,
        Stage::Optimized,
        Stage::Textured,
        Stage::Positioned,
        Stage::Transferred,
        Stage::Merged,
        Stage::Inpainted,
        Stage::Complete,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Annotated => "annotated",
            Stage::Triangulated => "triangulated",
            Stage::Optimized => "optimized",
            Stage::Textured => "textured",
            Stage::Positioned => "positioned",
            Stage::Transferred => "transferred",
            Stage::Merged => "merged",
            Stage::Inpainted => "inpainted",
            Stage::Complete => "complete",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    /// Accepts stage names and the short verbs `triangulate`, `optimize`,
    /// `texture`, `position`, `transfer`, `merge`, `inpaint`, `export`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let verb = match s.as_str() {
            "triangulate" => Some(Stage::Triangulated),
            "optimize" => Some(Stage::Optimized),
            "texture" => Some(Stage::Textured),
            "position" => Some(Stage::Positioned),
            "transfer" => Some(Stage::Transferred),
            "merge" => Some(Stage::Merged),
            "inpaint" => Some(Stage::Inpainted),
            "export" => Some(Stage::Complete),
            _ => None,
        };
        verb.or_else(|| Stage::ALL.into_iter().find(|st| st.name() == s))
            .ok_or_else(|| Error::InvalidProject(format!("unknown stage `{s}`")))
    }
}

/// Reference to the drawing image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    /// Path relative to the project file.
    pub path: String,
    /// Lowercase hex SHA-256 of the file bytes.
    pub sha256: String,
}

/// How a part relates to the others.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    Solo,
    /// Visible member of an intrinsic pair.
    Near { partner: String, parent: String },
    /// Occluded member; its texture is transferred from the near one.
    Far { partner: String, parent: String },
}

/// User adjustments of the inferred pose.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Added to the inferred depth.
    #[serde(default)]
    pub depth_offset: f64,
    /// Replaces the inferred symmetry plane when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<Plane>,
}

impl Pose {
    fn is_default(&self) -> bool {
        *self == Pose::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartRecord {
    pub id: String,
    pub annotations: AnnotationSet,
    #[serde(default)]
    pub pairing: Pairing,
    /// Declared parent of a solo part. Without one the part attaches to
    /// the placed part its outline overlaps most.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Pose::is_default")]
    pub pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<EnergyWeights>,
    /// Texture transfer key pairs as (this part, partner) midline
    /// parameters in `[0, 1)`; only read on far parts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub key_pairs: Vec<[f64; 2]>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl PartRecord {
    pub fn new(id: impl Into<String>, annotations: AnnotationSet) -> Self {
        Self {
            id: id.into(),
            annotations,
            pairing: Pairing::Solo,
            parent: None,
            pose: Pose::default(),
            weights: None,
            key_pairs: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    /// Parent in the part graph, declared or implied by pairing.
    pub fn declared_parent(&self) -> Option<&str> {
        match &self.pairing {
            Pairing::Solo => self.parent.as_deref(),
            Pairing::Near { parent, .. } | Pairing::Far { parent, .. } => Some(parent),
        }
    }
}

/// Settings of every stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub shape: ShapeConfig,
    #[serde(default)]
    pub idsc: IdscParams,
    #[serde(default)]
    pub merge: MergeConfig,
    #[serde(default)]
    pub ill: IllConfig,
    #[serde(default)]
    pub inpaint: InpaintConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectFile {
    pub version: u32,
    pub image: ImageRef,
    #[serde(default)]
    pub seed: u64,
    /// Root part id; the first part when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<String>,
    pub parts: Vec<PartRecord>,
    #[serde(default)]
    pub config: PipelineConfig,
    #[serde(default)]
    pub stage: Stage,
    /// Input fingerprint of every completed stage.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub checkpoints: BTreeMap<Stage, String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

impl ProjectFile {
    /// A project over the image at `path` (relative to the project file)
    /// with contents `bytes`.
    pub fn new(path: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            version: SCHEMA_VERSION,
            image: ImageRef {
                path: path.into(),
                sha256: sha256_hex(bytes),
            },
            seed: 0,
            root: None,
            parts: Vec::new(),
            config: PipelineConfig::default(),
            stage: Stage::Annotated,
            checkpoints: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }

    /// Parses project JSON, checking the schema version before the layout.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(parse_error)?;
        let found = raw.get("version").and_then(Value::as_u64).unwrap_or(0);
        if found > SCHEMA_VERSION as u64 {
            return Err(Error::SchemaTooNew {
                found: found.min(u32::MAX as u64) as u32,
                supported: SCHEMA_VERSION,
            });
        }
        serde_json::from_str(text).map_err(parse_error)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("project serializes");
        s.push('\n');
        s
    }

    pub fn part_index(&self, id: &str) -> Option<usize> {
        self.parts.iter().position(|p| p.id == id)
    }

    pub fn root_index(&self) -> Result<usize> {
        match &self.root {
            Some(id) => self
                .part_index(id)
                .ok_or_else(|| Error::InvalidProject(format!("root part `{id}` does not exist"))),
            None if self.parts.is_empty() => Err(Error::InvalidProject("project has no parts".into())),
            None => Ok(0),
        }
    }

    /// Checks ids, references, pairing symmetry and annotations.
    pub fn validate(&self) -> Result<()> {
        if self.version > SCHEMA_VERSION {
            return Err(Error::SchemaTooNew {
                found: self.version,
                supported: SCHEMA_VERSION,
            });
        }
        let mut ids = BTreeSet::new();
        for p in &self.parts {
            if p.id.is_empty() || !ids.insert(p.id.as_str()) {
                return Err(Error::InvalidProject(format!("part id `{}` is empty or repeated", p.id)));
            }
        }
        let root = self.root_index()?;
        let stage_err = |part: &str, message: String, hint: &str| Error::Stage {
            part: part.to_string(),
            message,
            hint: hint.to_string(),
        };
        for (i, p) in self.parts.iter().enumerate() {
            p.annotations
                .validate()
                .map_err(|e| stage_err(&p.id, e.to_string(), "redraw the outline as a simple closed curve"))?;
            if i == root && p.declared_parent().is_some() {
                return Err(stage_err(&p.id, "the root part cannot have a parent".into(), "remove its parent or pairing"));
            }
            if let Some(parent) = p.declared_parent() {
                let k = self
                    .part_index(parent)
                    .ok_or_else(|| stage_err(&p.id, format!("parent `{parent}` does not exist"), "pick an existing part"))?;
                if k == i {
                    return Err(stage_err(&p.id, "a part cannot be its own parent".into(), "pick another parent"));
                }
                if matches!(p.pairing, Pairing::Near { .. } | Pairing::Far { .. })
                    && self.parts[k].pairing != Pairing::Solo
                {
                    return Err(stage_err(&p.id, format!("parent `{parent}` is itself paired"), "attach the pair to a solo part"));
                }
            }
            let (partner, parent, want_near) = match &p.pairing {
                Pairing::Solo => continue,
                Pairing::Near { partner, parent } => (partner, parent, false),
                Pairing::Far { partner, parent } => (partner, parent, true),
            };
            let q = self
                .part_index(partner)
                .map(|j| &self.parts[j])
                .ok_or_else(|| stage_err(&p.id, format!("partner `{partner}` does not exist"), "pick an existing part"))?;
            let reciprocal = match &q.pairing {
                Pairing::Near { partner: pp, parent: qp } if want_near => pp == &p.id && qp == parent,
                Pairing::Far { partner: pp, parent: qp } if !want_near => pp == &p.id && qp == parent,
                _ => false,
            };
            if !reciprocal {
                return Err(stage_err(
                    &p.id,
                    format!("pairing with `{partner}` is not mirrored by it"),
                    "declare one near and one far part naming each other and the same parent",
                ));
            }
        }
        // parent links must reach the root without cycles
        for p in &self.parts {
            let mut seen = BTreeSet::new();
            let mut cur = p;
            while let Some(parent) = cur.declared_parent() {
                if !seen.insert(cur.id.as_str()) {
                    return Err(stage_err(&p.id, "parent links form a cycle".into(), "break the cycle"));
                }
                cur = &self.parts[self.part_index(parent).expect("checked above")];
            }
        }
        Ok(())
    }
}

/// A project file together with where it lives.
#[derive(Clone, Debug)]
pub struct LoadedProject {
    pub file: ProjectFile,
    pub path: PathBuf,
    pub image_bytes: Vec<u8>,
}

impl LoadedProject {
    pub fn dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }
}

/// Reads a project, verifies the drawing's hash and validates it.
pub fn load_project(path: &Path) -> Result<LoadedProject> {
    let p = read_project(path)?;
    p.file.validate()?;
    Ok(p)
}

/// Reads a project and verifies the drawing's hash without validating the
/// parts.
pub fn read_project(path: &Path) -> Result<LoadedProject> {
    let text = std::fs::read_to_string(path)?;
    let file = ProjectFile::from_json(&text)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let image_bytes = std::fs::read(dir.join(&file.image.path))?;
    let found = sha256_hex(&image_bytes);
    if !found.eq_ignore_ascii_case(&file.image.sha256) {
        return Err(Error::HashMismatch {
            expected: file.image.sha256.clone(),
            found,
        });
    }
    Ok(LoadedProject {
        file,
        path: path.to_path_buf(),
        image_bytes,
    })
}

pub fn save_project(path: &Path, file: &ProjectFile) -> Result<()> {
    std::fs::write(path, file.to_json())?;
    Ok(())
}
