use std::path::Path;
use std::process::{Command, Output};

use critter_cli::cli::{build, validate, BuildOptions};
use critter_core::fixtures::{two_part_parts, write_fixture};
use critter_core::project::{load_project, Stage};

fn critter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critter")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn fixture(dir: &Path) -> String {
    write_fixture(dir, &two_part_parts(), 128, 200).unwrap().to_string_lossy().into_owned()
}

#[test]
fn build_until_a_stage_records_it() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture(dir.path());
    let out = critter(&["build", &project, "--until", "optimize"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("stage: optimized"), "{stdout}");
    assert!(stdout.contains("part head: energy"));
    let saved = load_project(Path::new(&project)).unwrap();
    assert_eq!(saved.file.stage, Stage::Optimized);
}

#[test]
fn build_exports_the_character() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture(&dir.path().join("p"));
    let out_dir = dir.path().join("out");
    let out = critter(&["build", &project, "--seed", "7", "--export", out_dir.to_str().unwrap(), "--dump-debug"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("stage: complete"));
    let obj = std::fs::read_to_string(out_dir.join("character.obj")).unwrap();
    assert!(obj.contains("mtllib character.mtl"));
    assert!(out_dir.join("character_page0.png").is_file());
    let debug = dir.path().join("p/debug");
    for stage in ["triangulated", "optimized", "merged", "complete"] {
        assert!(debug.join(format!("{stage}.json")).is_file(), "{stage}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(debug.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["stage"], "complete");
    assert_eq!(load_project(Path::new(&project)).unwrap().file.seed, 7);
}

#[test]
fn export_of_an_unfinished_build_fails() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture(dir.path());
    let out = critter(&["build", &project, "--until", "merge", "--export", dir.path().join("out").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("nothing to export"));
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture(dir.path());
    let out = critter(&["build", &project, "--until", "bake"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("unknown stage"));
    let out = critter(&["build", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_reports_each_part() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture(dir.path());
    let out = critter(&["validate", &project]);
    assert!(out.status.success(), "{}", text(&out.stdout));
    assert!(text(&out.stdout).contains("ok    body"));

    let mut text_json = std::fs::read_to_string(&project).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text_json).unwrap();
    v["parts"][1]["annotations"]["outline"] = serde_json::json!([[0.2, 0.2], [0.8, 0.8], [0.8, 0.2], [0.2, 0.8]]);
    text_json = serde_json::to_string_pretty(&v).unwrap();
    std::fs::write(&project, text_json).unwrap();
    let out = critter(&["validate", &project]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("ok    body") && stdout.contains("error head"), "{stdout}");

    std::fs::write(dir.path().join("drawing.png"), b"not a png").unwrap();
    let out = critter(&["validate", &project]);
    assert!(text(&out.stderr).contains("image hash mismatch"), "{}", text(&out.stderr));
}

#[test]
fn library_entry_points_match_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixture(dir.path());
    assert!(validate(Path::new(&project)).unwrap().is_ok());
    let mut opts = BuildOptions::new(&project);
    opts.until = Stage::Positioned;
    let report = build(&opts).unwrap();
    assert_eq!(report.stage, Stage::Positioned);
    assert_eq!(report.parts.len(), 2);
    assert!(report.export.is_none());
}
