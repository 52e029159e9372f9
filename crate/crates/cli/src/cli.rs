//! The `critter` command line.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use critter_core::export::ExportFiles;
use critter_core::inpaint::Hooks;
use critter_core::pipeline::Pipeline;
use critter_core::project::{read_project, save_project, Stage};
use critter_core::texturer::FaceFlag;
use critter_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "critter", version, about = "Turn an annotated character drawing into a textured 3D mesh")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline on a project and record its checkpoints.
    Build(BuildOptions),
    /// Check a project file, its image and every part's annotations.
    Validate { project: PathBuf },
    /// Serve the HTTP API for every project below a directory.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = ".")]
        projects: PathBuf,
    },
}

#[derive(Clone, Debug, clap::Args)]
pub struct BuildOptions {
    /// Path to `project.json`.
    pub project: PathBuf,
    /// Last stage to run, by name (`merged`) or verb (`merge`).
    #[arg(long, default_value = "complete")]
    pub until: Stage,
    /// Overrides the project's inpainting seed; the override is saved.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes `character.obj`, its material and texture pages here.
    #[arg(long)]
    pub export: Option<PathBuf>,
    /// Writes per-stage preview meshes and a report to `debug/` next to the
    /// project.
    #[arg(long)]
    pub dump_debug: bool,
}

impl BuildOptions {
    pub fn new(project: impl Into<PathBuf>) -> Self {
        Self {
            project: project.into(),
            until: Stage::Complete,
            seed: None,
            export: None,
            dump_debug: false,
        }
    }
}

/// What a build produced.
#[derive(Clone, Debug)]
pub struct BuildReport {
    pub stage: Stage,
    pub parts: Vec<(String, f64)>,
    pub vertices: usize,
    pub faces: usize,
    pub inpainted: usize,
    pub warnings: Vec<String>,
    pub export: Option<ExportFiles>,
    pub debug_dir: Option<PathBuf>,
}

impl fmt::Display for BuildReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "stage: {}", self.stage)?;
        for (id, e) in &self.parts {
            writeln!(f, "  part {id}: energy {e:.6}")?;
        }
        if self.faces > 0 {
            writeln!(f, "mesh: {} vertices, {} faces, {} inpainted", self.vertices, self.faces, self.inpainted)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        if let Some(x) = &self.export {
            writeln!(f, "wrote {}", x.mesh.display())?;
            writeln!(f, "wrote {}", x.material.display())?;
            for p in &x.pages {
                writeln!(f, "wrote {}", p.display())?;
            }
        }
        if let Some(d) = &self.debug_dir {
            writeln!(f, "debug output in {}", d.display())?;
        }
        Ok(())
    }
}

pub fn build(opts: &BuildOptions) -> Result<BuildReport> {
    let mut p = Pipeline::open(&opts.project)?;
    if let Some(seed) = opts.seed {
        p.project.file.seed = seed;
    }
    let outcome = p.run(opts.until, Hooks::default());
    save_project(&opts.project, &p.project.file)?;
    let debug_dir = if opts.dump_debug {
        Some(dump_debug(&p, &opts.project.with_file_name("debug"), outcome.as_ref().err())?)
    } else {
        None
    };
    outcome?;
    let export = opts.export.as_ref().map(|dir| p.export(dir)).transpose()?;
    let (vertices, faces, inpainted) = match (p.final_mesh(), &p.merged) {
        (Some(tm), _) => (tm.mesh.vertex_count(), tm.face_count(), tm.count(FaceFlag::Inpainted)),
        (None, Some(m)) => (m.mesh.mesh.vertex_count(), m.mesh.face_count(), 0),
        _ => (0, 0, 0),
    };
    let ids = p.project.file.parts.iter().map(|r| r.id.clone());
    Ok(BuildReport {
        stage: p.stage(),
        parts: ids.zip(p.part_energies()).collect(),
        vertices,
        faces,
        inpainted,
        warnings: p.warnings.clone(),
        export,
        debug_dir,
    })
}

fn dump_debug(p: &Pipeline, dir: &Path, failure: Option<&Error>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let reached = p.stage();
    for stage in Stage::ALL.into_iter().skip(1).filter(|s| *s <= reached) {
        let preview = p.preview(stage)?;
        std::fs::write(dir.join(format!("{stage}.json")), serde_json::to_string(&preview).expect("serializable"))?;
    }
    let report = serde_json::json!({
        "stage": reached,
        "warnings": p.warnings,
        "energies": p.part_energies(),
        "placements": p.placements.iter().map(|pl| serde_json::json!({"parent": pl.parent, "dz": pl.dz, "plane": pl.plane})).collect::<Vec<_>>(),
        "error": failure.map(|e| e.to_string()),
    });
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).expect("serializable"))?;
    Ok(dir.to_path_buf())
}

/// Result of checking one project.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub parts: Vec<(String, Option<String>)>,
    pub project_error: Option<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.project_error.is_none() && self.parts.iter().all(|(_, e)| e.is_none())
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, e) in &self.parts {
            match e {
                None => writeln!(f, "ok    {id}")?,
                Some(e) => writeln!(f, "error {id}: {e}")?,
            }
        }
        if let Some(e) = &self.project_error {
            writeln!(f, "error: {e}")?;
        }
        writeln!(f, "{}", if self.is_ok() { "project is valid" } else { "project is invalid" })
    }
}

/// Loads the project (schema, image hash) and checks every part. Load
/// failures are returned as errors; annotation problems are listed per part.
pub fn validate(path: &Path) -> Result<ValidationReport> {
    let loaded = read_project(path)?;
    image::load_from_memory(&loaded.image_bytes)?;
    let file = &loaded.file;
    let parts = file
        .parts
        .iter()
        .map(|p| (p.id.clone(), p.annotations.validate().err().map(|e| e.to_string())))
        .collect::<Vec<_>>();
    let project_error = if parts.iter().all(|(_, e)| e.is_none()) {
        file.validate().err().map(|e| e.to_string())
    } else {
        None
    };
    Ok(ValidationReport { parts, project_error })
}
