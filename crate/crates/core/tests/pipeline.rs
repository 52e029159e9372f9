use std::path::{Path, PathBuf};

use critter_core::assembler::merge::max_collar_uv_jump;
use critter_core::export::parse_obj;
use critter_core::fixtures::{seven_part_parts, two_part_parts, write_fixture};
use critter_core::inpaint::Hooks;
use critter_core::pipeline::Pipeline;
use critter_core::project::{save_project, Stage};
use critter_core::texturer::FaceFlag;
use critter_core::Error;

fn two_part(dir: &Path) -> PathBuf {
    write_fixture(dir, &two_part_parts(), 160, 200).unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn until_optimize_shapes_without_texturing() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(&two_part(dir.path())).unwrap();
    p.run(Stage::Optimized, Hooks::default()).unwrap();
    assert_eq!(p.stage(), Stage::Optimized);
    assert_eq!(p.shaped.len(), 2);
    assert!(p.shaped.iter().all(|s| s.part.mesh.positions().iter().any(|q| q.z.abs() > 1e-3)));
    assert!(p.textured.is_empty());
    assert!(p.result.is_none());
    assert_eq!(p.project.file.stage, Stage::Optimized);
    assert!(p.project.file.checkpoints.contains_key(&Stage::Triangulated));
    assert!(!p.project.file.checkpoints.contains_key(&Stage::Textured));
}

#[test]
fn two_part_fixture_is_watertight_and_textured() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(&two_part(dir.path())).unwrap();
    p.run(Stage::Complete, Hooks::default()).unwrap();
    let merged = p.merged.as_ref().unwrap();
    let mesh = &p.final_mesh().unwrap().mesh;
    assert!(mesh.is_closed() && mesh.is_oriented_manifold());
    assert_eq!(mesh.euler_characteristic(), 2);
    assert_eq!(p.final_mesh().unwrap().count(FaceFlag::Ill), 0);
    let texel = 1.0 / 160.0;
    assert!(max_collar_uv_jump(&merged.mesh, &merged.collar) < texel);
}

#[test]
fn rerun_skips_current_stages_and_edits_invalidate_later_ones() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(&two_part(dir.path())).unwrap();
    p.run(Stage::Merged, Hooks::default()).unwrap();
    let before = p.fingerprint(Stage::Merged);
    let merged = p.merged.as_ref().unwrap().mesh.mesh.positions().to_vec();
    p.run(Stage::Merged, Hooks::default()).unwrap();
    assert_eq!(p.merged.as_ref().unwrap().mesh.mesh.positions(), &merged[..]);

    // a pose change keeps the shaped parts and redoes placement onwards
    p.project.file.parts[1].pose.depth_offset = 0.01;
    assert_ne!(p.fingerprint(Stage::Merged), before);
    assert_eq!(p.stage(), Stage::Textured);
    p.run(Stage::Positioned, Hooks::default()).unwrap();
    assert!((p.placements[1].dz - 0.01).abs() < 1e-12);
    assert_eq!(p.stage(), Stage::Positioned);

    // an outline change invalidates everything
    p.project.file.parts[0].annotations.outline[0].x += 0.01;
    assert_eq!(p.stage(), Stage::Annotated);
}

#[test]
fn invalid_annotation_reports_part_and_hint() {
    let dir = tempfile::tempdir().unwrap();
    let path = two_part(dir.path());
    let mut p = Pipeline::open(&path).unwrap();
    let o = &mut p.project.file.parts[1].annotations.outline;
    // a bow tie
    *o = vec![o[0], o[0] + nalgebra::Vector2::new(0.1, 0.1), o[0] + nalgebra::Vector2::new(0.1, 0.0), o[0] + nalgebra::Vector2::new(0.0, 0.1)];
    match p.run(Stage::Triangulated, Hooks::default()) {
        Err(Error::Stage { part, hint, .. }) => {
            assert_eq!(part, "head");
            assert!(!hint.is_empty());
        }
        other => panic!("{:?}", other.err()),
    }
}

#[test]
fn disconnected_part_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut parts = two_part_parts();
    parts[1].parent = None;
    for q in &mut parts[1].outline {
        q.x += 0.5;
        q.y += 0.35;
    }
    let path = write_fixture(dir.path(), &parts, 128, 150).unwrap();
    let mut p = Pipeline::open(&path).unwrap();
    match p.run(Stage::Positioned, Hooks::default()) {
        Err(Error::Stage { part, message, .. }) => {
            assert_eq!(part, "head");
            assert!(message.contains("disconnected"), "{message}");
        }
        other => panic!("{:?}", other.err()),
    }
}

#[test]
fn seven_part_export_has_two_pages_and_reimports() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_fixture(&dir.path().join("fixture"), &seven_part_parts(), 200, 200).unwrap();
    let mut p = Pipeline::open(&path).unwrap();
    p.run(Stage::Complete, Hooks::default()).unwrap();
    let tm = p.final_mesh().unwrap();
    assert!(tm.mesh.is_closed());
    assert!(tm.count(FaceFlag::Inpainted) > 0);
    let files = p.export(&dir.path().join("out")).unwrap();
    assert_eq!(files.pages.len(), 2);
    let obj = parse_obj(&std::fs::read_to_string(&files.mesh).unwrap()).unwrap();
    assert_eq!(obj.positions.len(), tm.mesh.vertex_count());
    assert_eq!(obj.faces.len(), tm.face_count());
    for (a, b) in obj.positions.iter().zip(tm.mesh.positions()) {
        assert!((a - b).norm() < 1e-6);
    }
    // the checkpointed project saves and reloads
    save_project(&path, &p.project.file).unwrap();
    let again = Pipeline::open(&path).unwrap();
    assert_eq!(again.project.file.stage, Stage::Complete);
}

#[test]
fn same_seed_gives_identical_exports() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_fixture(&dir.path().join("fixture"), &seven_part_parts(), 160, 150).unwrap();
    let mut outs = Vec::new();
    for k in 0..2 {
        let mut p = Pipeline::open(&path).unwrap();
        p.run(Stage::Complete, Hooks::default()).unwrap();
        let out = dir.path().join(format!("out{k}"));
        p.export(&out).unwrap();
        outs.push(read_dir_bytes(&out));
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn export_before_completion_has_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(&two_part(dir.path())).unwrap();
    p.run(Stage::Merged, Hooks::default()).unwrap();
    assert!(matches!(p.export(&dir.path().join("out")), Err(Error::NothingToExport)));
}

#[test]
fn previews_follow_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(&two_part(dir.path())).unwrap();
    assert!(p.preview(Stage::Optimized).is_err());
    p.run(Stage::Merged, Hooks::default()).unwrap();
    let parts = p.preview(Stage::Optimized).unwrap();
    let merged = p.preview(Stage::Merged).unwrap();
    assert_eq!(parts.faces.len() % 3, 0);
    assert_eq!(merged.uvs.len(), merged.faces.len() * 2);
    assert_eq!(merged.pages.len() * 3, merged.faces.len());
    assert!(p.preview(Stage::Inpainted).is_err());
}
