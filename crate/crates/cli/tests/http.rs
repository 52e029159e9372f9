use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use critter_cli::server::{router, AppState, REVISION_HEADER};
use critter_core::fixtures::{ellipse, seven_part_parts, two_part_parts, write_fixture, FixturePart};
use critter_core::geometry::Point2;
use critter_core::project::Pairing;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    revision: u64,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let revision = res.headers()[REVISION_HEADER].to_str().unwrap().parse().unwrap();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, revision, bytes }
}

fn circle() -> Vec<FixturePart> {
    vec![FixturePart {
        id: "ball",
        outline: ellipse(Point2::new(0.5, 0.5), 0.3, 0.3, 0.0, 96),
        color: [180, 60, 60],
        layer: 0,
        pairing: Pairing::Solo,
        parent: None,
    }]
}

fn app_with(root: &Path, projects: &[(&str, Vec<FixturePart>, u32, usize)]) -> Router {
    for (name, parts, size, faces) in projects {
        write_fixture(&root.join(name), parts, *size, *faces).unwrap();
    }
    router(AppState::new(root))
}

#[tokio::test]
async fn lists_projects_and_reports_missing_ones() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(dir.path(), &[("b", circle(), 64, 200), ("a", circle(), 64, 200)]);
    let r = call(&app, Method::GET, "/projects", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["projects"], json!(["a", "b"]));
    let r = call(&app, Method::GET, "/projects/nope", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.json()["error"]["kind"], "not_found");
    let r = call(&app, Method::GET, "/projects/..", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn put_then_get_gives_the_same_body_one_revision_later() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(dir.path(), &[("p", circle(), 64, 200)]);
    let got = call(&app, Method::GET, "/projects/p", None).await;
    assert_eq!(got.status, StatusCode::OK);
    let body = got.json();
    let rev = body["revision"].as_u64().unwrap();
    assert_eq!(got.revision, rev);

    let mut project = body["project"].clone();
    project["seed"] = json!(99);
    project["ui_layout"] = json!({"zoom": 2.5});
    let put = call(&app, Method::PUT, "/projects/p", Some(json!({"revision": rev, "project": project}))).await;
    assert_eq!(put.status, StatusCode::OK, "{}", put.json());
    assert_eq!(put.revision, rev + 1);

    let again = call(&app, Method::GET, "/projects/p", None).await;
    assert_eq!(again.bytes, put.bytes);
    assert_eq!(again.json()["revision"], json!(rev + 1));
    assert_eq!(again.json()["project"]["ui_layout"]["zoom"], json!(2.5));
    // the write reached the disk
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p/project.json")).unwrap()).unwrap();
    assert_eq!(on_disk["seed"], json!(99));
}

#[tokio::test]
async fn conflicting_puts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(dir.path(), &[("p", circle(), 64, 200)]);
    let body = call(&app, Method::GET, "/projects/p", None).await.json();
    let rev = body["revision"].as_u64().unwrap();
    let put = |seed: u64| {
        let mut project = body["project"].clone();
        project["seed"] = json!(seed);
        call(&app, Method::PUT, "/projects/p", Some(json!({"revision": rev, "project": project})))
    };
    let (a, b) = tokio::join!(put(1), put(2));
    let mut statuses = [a.status, b.status];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    let loser = if a.status == StatusCode::CONFLICT { a } else { b };
    assert_eq!(loser.json()["error"]["kind"], "revision_conflict");
    assert_eq!(loser.revision, rev + 1);

    let r = call(&app, Method::PUT, "/projects/p", Some(json!({"project": body["project"]}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn malformed_and_invalid_projects_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(dir.path(), &[("p", circle(), 64, 200)]);
    let req = Request::builder()
        .method(Method::PUT)
        .uri("/projects/p")
        .body(Body::from("{\"revision\": 1,\n  \"project\": [}"))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&res.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert!(body["error"]["message"].as_str().unwrap().contains("line 2"), "{body}");

    let mut project = call(&app, Method::GET, "/projects/p", None).await.json()["project"].clone();
    project["version"] = json!(999);
    let r = call(&app, Method::PUT, "/projects/p", Some(json!({"revision": 1, "project": project.clone()}))).await;
    assert_eq!(r.json()["error"]["kind"], "schema_too_new");
    project["version"] = json!(1);
    project["image"]["sha256"] = json!("00");
    project["image"]["path"] = json!("drawing.png");
    let r = call(&app, Method::PUT, "/projects/p", Some(json!({"revision": 1, "project": project}))).await;
    // same path, different hash: treated as an image change and verified
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"]["kind"], "hash_mismatch");
    assert_eq!(call(&app, Method::GET, "/projects/p", None).await.revision, 1);
}

#[tokio::test]
async fn optimize_is_interactive_at_1600_triangles() {
    let dir = tempfile::tempdir().unwrap();
    // the outline target is per side and refinement overshoots it
    let app = app_with(dir.path(), &[("c", circle(), 128, 530)]);
    // opening the project is not part of the budget
    call(&app, Method::GET, "/projects/c", None).await;
    let t = Instant::now();
    let r = call(&app, Method::POST, "/projects/c/parts/ball/optimize", None).await;
    let elapsed = t.elapsed();
    assert_eq!(r.status, StatusCode::OK, "{}", r.json());
    let body = r.json();
    let faces = body["mesh"]["faces"].as_array().unwrap().len() / 3;
    assert!((1400..=1900).contains(&faces), "{faces}");
    eprintln!("{faces} faces in {elapsed:?}");
    assert_eq!(body["mesh"]["positions"].as_array().unwrap().len(), 3 * body["vertices"].as_u64().unwrap() as usize);
    assert!(body["energy"].as_f64().unwrap().is_finite());
    assert!(body["plane"]["normal"].is_array());
    assert!(elapsed < Duration::from_secs(1), "{elapsed:?}");
    // nothing changed, so the revision stays
    assert_eq!(r.revision, 1);
}

#[tokio::test]
async fn optimize_applies_annotation_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(dir.path(), &[("c", circle(), 64, 300)]);
    let max_z = |b: &Value| {
        b["mesh"]["positions"].as_array().unwrap().chunks(3).map(|p| p[2].as_f64().unwrap().abs()).fold(0.0, f64::max)
    };
    let base = call(&app, Method::POST, "/projects/c/parts/ball/optimize", Some(json!({}))).await;
    let thin = call(
        &app,
        Method::POST,
        "/projects/c/parts/ball/optimize",
        Some(json!({"revision": 1, "annotations": {"thickness": 0.3}})),
    )
    .await;
    assert_eq!(thin.status, StatusCode::OK, "{}", thin.json());
    assert_eq!(thin.revision, 2);
    assert!(max_z(&thin.json()) < max_z(&base.json()));
    let stored = call(&app, Method::GET, "/projects/c", None).await.json();
    assert_eq!(stored["project"]["parts"][0]["annotations"]["thickness"], json!(0.3));

    // a self-intersecting outline is refused and not stored
    let bow = json!([[0.2, 0.2], [0.8, 0.8], [0.8, 0.2], [0.2, 0.8]]);
    let r = call(&app, Method::POST, "/projects/c/parts/ball/optimize", Some(json!({"annotations": {"outline": bow}}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let err = r.json()["error"].clone();
    assert_eq!(err["part"], "ball");
    assert!(!err["hint"].as_str().unwrap().is_empty());
    assert_eq!(r.revision, 2);
    let after = call(&app, Method::GET, "/projects/c", None).await.json();
    assert_eq!(after["project"]["parts"][0]["annotations"], stored["project"]["parts"][0]["annotations"]);

    let r = call(&app, Method::POST, "/projects/c/parts/nope/optimize", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = call(&app, Method::POST, "/projects/c/parts/ball/optimize", Some(json!({"revision": 1}))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn assemble_then_preview_and_pages() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(dir.path(), &[("two", two_part_parts(), 128, 200)]);
    let r = call(&app, Method::GET, "/projects/two/preview/merged", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.json()["error"]["kind"], "not_built");

    let r = call(&app, Method::POST, "/projects/two/assemble", None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.json());
    let body = r.json();
    assert_eq!(body["stage"], "merged");
    assert!(body["collar_faces"].as_u64().unwrap() > 0);
    assert_eq!(r.revision, 2);
    let stored = call(&app, Method::GET, "/projects/two", None).await.json();
    assert_eq!(stored["project"]["stage"], "merged");

    let p = call(&app, Method::GET, "/projects/two/preview/merge", None).await.json();
    let faces = p["faces"].as_array().unwrap().len();
    assert_eq!(faces, 3 * body["faces"].as_u64().unwrap() as usize);
    assert_eq!(p["uvs"].as_array().unwrap().len(), 2 * faces);
    assert_eq!(p["page_urls"], json!(["/projects/two/pages/0"]));
    let parts = call(&app, Method::GET, "/projects/two/preview/optimized", None).await;
    assert_eq!(parts.status, StatusCode::OK);
    let r = call(&app, Method::GET, "/projects/two/preview/banana", None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let png = call(&app, Method::GET, "/projects/two/pages/0", None).await;
    assert_eq!(png.status, StatusCode::OK);
    let img = image::load_from_memory(&png.bytes).unwrap();
    assert_eq!((img.width(), img.height()), (128, 128));
    assert_eq!(call(&app, Method::GET, "/projects/two/pages/1", None).await.status, StatusCode::NOT_FOUND);
}

async fn wait_for_job(app: &Router, uri: &str) -> Value {
    let t = Instant::now();
    loop {
        let v = call(app, Method::GET, uri, None).await.json();
        if v["state"] != "running" {
            return v;
        }
        assert!(t.elapsed() < Duration::from_secs(300), "job did not finish");
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

#[tokio::test]
async fn inpaint_job_reports_decreasing_energy_per_scale() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(dir.path(), &[("seven", seven_part_parts(), 160, 150)]);
    let r = call(&app, Method::GET, "/projects/seven/inpaint", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let r = call(&app, Method::POST, "/projects/seven/inpaint", Some(json!({"revision": 1}))).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    assert_eq!(r.json()["state"], "running");
    let again = call(&app, Method::POST, "/projects/seven/inpaint", None).await;
    assert_eq!(again.status, StatusCode::CONFLICT);
    let busy = call(&app, Method::POST, "/projects/seven/assemble", None).await;
    assert_eq!(busy.json()["error"]["kind"], "busy");
    // reads of the project stay available
    assert_eq!(call(&app, Method::GET, "/projects/seven", None).await.status, StatusCode::OK);

    let done = wait_for_job(&app, "/projects/seven/inpaint").await;
    assert_eq!(done["state"], "done", "{done}");
    assert_eq!(done["revision"], json!(2));
    let progress = done["progress"].as_array().unwrap();
    assert!(progress.len() >= 2);
    let scales = progress[0]["scales"].as_u64().unwrap();
    for s in 0..scales {
        let e: Vec<f64> = progress
            .iter()
            .filter(|p| p["scale"].as_u64() == Some(s))
            .map(|p| p["energy"].as_f64().unwrap())
            .collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-9), "scale {s}: {e:?}");
    }

    let p = call(&app, Method::GET, "/projects/seven/preview/complete", None).await.json();
    assert_eq!(p["page_urls"].as_array().unwrap().len(), 2);
    let png = call(&app, Method::GET, "/projects/seven/pages/1.png", None).await;
    assert_eq!(png.status, StatusCode::OK);
    assert!(image::load_from_memory(&png.bytes).is_ok());
    let stored = call(&app, Method::GET, "/projects/seven", None).await.json();
    assert_eq!(stored["project"]["stage"], "complete");
}

#[tokio::test]
async fn inpaint_job_can_be_cancelled() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(dir.path(), &[("seven", seven_part_parts(), 128, 150)]);
    let r = call(&app, Method::POST, "/projects/seven/inpaint", None).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let r = call(&app, Method::DELETE, "/projects/seven/inpaint", None).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let end = wait_for_job(&app, "/projects/seven/inpaint").await;
    assert_eq!(end["state"], "cancelled", "{end}");
    // earlier stages survive and the project accepts work again
    let stored = call(&app, Method::GET, "/projects/seven", None).await.json();
    assert_eq!(stored["project"]["stage"], "merged");
    let r = call(&app, Method::GET, "/projects/seven/preview/merged", None).await;
    assert_eq!(r.status, StatusCode::OK);
}

#[test]
fn state_is_shareable() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<Arc<AppState>>();
}
