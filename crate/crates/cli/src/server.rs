//! HTTP/JSON API over a directory of projects.
//!
//! Every project lives in `<root>/<name>/project.json`. Each response
//! carries the project's revision, both in the JSON body and in the
//! `x-revision` header. Writes may name the revision they were based on and
//! are rejected with 409 when it is stale. Inpainting runs as a background
//! job; while it runs, other writes and mesh reads answer 409.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use critter_core::inpaint::{Hooks, Progress};
use critter_core::optimizer::EnergyWeights;
use critter_core::part_builder::AnnotationSet;
use critter_core::pipeline::Pipeline;
use critter_core::project::{save_project, sha256_hex, LoadedProject, Pose, ProjectFile, Stage};
use critter_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const REVISION_HEADER: &str = "x-revision";

/// Shared server state: the project root and the projects opened so far.
pub struct AppState {
    root: PathBuf,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            root: root.into(),
            sessions: Mutex::new(HashMap::new()),
        })
    }

    fn session(&self, name: &str) -> Result<Arc<Session>, ApiError> {
        let valid = !name.is_empty() && !name.starts_with('.') && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !valid {
            return Err(ApiError::not_found(format!("no project `{name}`")));
        }
        let mut sessions = lock(&self.sessions);
        if let Some(s) = sessions.get(name) {
            return Ok(s.clone());
        }
        let path = self.root.join(name).join("project.json");
        if !path.is_file() {
            return Err(ApiError::not_found(format!("no project `{name}`")));
        }
        let s = Arc::new(Session::open(name, path)?);
        sessions.insert(name.to_string(), s.clone());
        Ok(s)
    }

    fn project_names(&self) -> Vec<String> {
        let mut names: Vec<String> = std::fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.path().join("project.json").is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        names
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// One open project.
struct Session {
    name: String,
    path: PathBuf,
    revision: AtomicU64,
    /// Copy of the project for readers that must not wait on a job.
    file: RwLock<ProjectFile>,
    pipeline: Mutex<Pipeline>,
    job: Mutex<Option<Arc<Job>>>,
}

#[derive(Default)]
struct Job {
    progress: Mutex<Vec<Progress>>,
    cancel: AtomicBool,
    state: Mutex<JobState>,
}

#[derive(Clone, Debug, Default, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
enum JobState {
    #[default]
    Running,
    Done,
    Cancelled,
    Failed {
        error: Value,
    },
}

impl Session {
    fn open(name: &str, path: PathBuf) -> Result<Self, ApiError> {
        let pipeline = Pipeline::open(&path)?;
        Ok(Self {
            name: name.to_string(),
            path,
            revision: AtomicU64::new(1),
            file: RwLock::new(pipeline.project.file.clone()),
            pipeline: Mutex::new(pipeline),
            job: Mutex::new(None),
        })
    }

    fn revision(&self) -> u64 {
        self.revision.load(Ordering::SeqCst)
    }

    fn busy(&self) -> bool {
        lock(&self.job).as_ref().is_some_and(|j| matches!(*lock(&j.state), JobState::Running))
    }

    /// The pipeline, unless a job holds it.
    fn pipeline(&self) -> Result<MutexGuard<'_, Pipeline>, ApiError> {
        if self.busy() {
            return Err(ApiError::new(StatusCode::CONFLICT, "busy", "an inpainting job is running"));
        }
        Ok(lock(&self.pipeline))
    }

    fn check_revision(&self, base: Option<u64>) -> Result<(), ApiError> {
        match base {
            Some(b) if b != self.revision() => Err(ApiError::new(
                StatusCode::CONFLICT,
                "revision_conflict",
                format!("revision {b} is stale; the project is at revision {}", self.revision()),
            )),
            _ => Ok(()),
        }
    }

    /// Saves the pipeline's project and bumps the revision.
    fn commit(&self, p: &mut Pipeline) -> Result<u64, ApiError> {
        p.sync_checkpoints();
        save_project(&self.path, &p.project.file)?;
        *self.file.write().unwrap_or_else(|e| e.into_inner()) = p.project.file.clone();
        Ok(self.revision.fetch_add(1, Ordering::SeqCst) + 1)
    }

    fn page_urls(&self, p: &Pipeline) -> Vec<String> {
        let pages = 1 + p.result.as_ref().is_some_and(|r| r.page.is_some()) as usize;
        (0..pages).map(|k| format!("/projects/{}/pages/{k}", self.name)).collect()
    }

    fn job_view(&self, job: &Job) -> Value {
        let state = lock(&job.state).clone();
        let mut v = serde_json::to_value(state).expect("serializable");
        v["progress"] = json!(*lock(&job.progress));
        v["revision"] = json!(self.revision());
        v
    }
}

/// Error response: `{"revision", "error": {"kind", "message", "part"?, "hint"?}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
    revision: u64,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({"kind": kind, "message": message.into()}),
            revision: 0,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn at(mut self, revision: u64) -> Self {
        self.revision = revision;
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (status, kind) = match &e {
            Error::Parse { .. } => (StatusCode::BAD_REQUEST, "parse"),
            Error::SchemaTooNew { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "schema_too_new"),
            Error::HashMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "hash_mismatch"),
            Error::InvalidProject(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_project"),
            Error::Stage { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "stage"),
            Error::NothingToExport => (StatusCode::CONFLICT, "nothing_to_export"),
            Error::Cancelled => (StatusCode::CONFLICT, "cancelled"),
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "pipeline"),
        };
        let mut err = ApiError::new(status, kind, message);
        if let Error::Stage { part, hint, .. } = &e {
            err.body["part"] = json!(part);
            err.body["hint"] = json!(hint);
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        reply(self.status, self.revision, json!({"revision": self.revision, "error": self.body}))
    }
}

fn reply(status: StatusCode, revision: u64, body: Value) -> Response {
    let mut r = (status, axum::Json(body)).into_response();
    r.headers_mut().insert(REVISION_HEADER, HeaderValue::from(revision));
    r
}

/// Parses an optional JSON body; an empty body gives the default.
fn parse_body<T: DeserializeOwned + Default>(bytes: &[u8]) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
        .into()
    })
}

/// Runs `f` on a blocking thread against the named project; errors carry
/// the project's revision.
async fn with_session<F>(state: Arc<AppState>, name: String, f: F) -> Response
where
    F: FnOnce(&Session) -> Result<Response, ApiError> + Send + 'static,
{
    let out = tokio::task::spawn_blocking(move || {
        let s = state.session(&name)?;
        f(&s).map_err(|e| e.at(s.revision()))
    })
    .await;
    match out {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()).into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/projects", get(list_projects))
        .route("/projects/{name}", get(get_project).put(put_project))
        .route("/projects/{name}/parts/{id}/optimize", post(optimize_part))
        .route("/projects/{name}/assemble", post(assemble))
        .route("/projects/{name}/inpaint", post(start_inpaint).get(inpaint_status).delete(cancel_inpaint))
        .route("/projects/{name}/preview/{stage}", get(preview))
        .route("/projects/{name}/pages/{page}", get(page))
        .with_state(state)
}

/// Serves `root` on localhost until interrupted.
pub async fn serve(root: PathBuf, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    log::info!("serving {} on http://{}", root.display(), listener.local_addr()?);
    axum::serve(listener, router(AppState::new(root)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn list_projects(State(state): State<Arc<AppState>>) -> Response {
    let names = tokio::task::spawn_blocking(move || state.project_names()).await.unwrap_or_default();
    reply(StatusCode::OK, 0, json!({"revision": 0, "projects": names}))
}

fn project_body(s: &Session) -> Value {
    let file = s.file.read().unwrap_or_else(|e| e.into_inner());
    let project: Value = serde_json::from_str(&file.to_json()).expect("serializable");
    json!({"revision": s.revision(), "project": project})
}

async fn get_project(State(state): State<Arc<AppState>>, Path(name): Path<String>) -> Response {
    with_session(state, name, |s| Ok(reply(StatusCode::OK, s.revision(), project_body(s)))).await
}

#[derive(Default, Deserialize)]
#[serde(default)]
struct PutRequest {
    revision: Option<u64>,
    project: Option<Value>,
}

async fn put_project(State(state): State<Arc<AppState>>, Path(name): Path<String>, body: Bytes) -> Response {
    with_session(state, name, move |s| {
        let req: PutRequest = parse_body(&body)?;
        let Some(revision) = req.revision else {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "missing_revision", "PUT needs the base revision"));
        };
        let project = req
            .project
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing_project", "PUT needs a project"))?;
        let file = ProjectFile::from_json(&project.to_string())?;
        file.validate()?;
        let mut p = s.pipeline()?;
        s.check_revision(Some(revision))?;
        let old = &p.project.file.image;
        if old.path != file.image.path || old.sha256 != file.image.sha256 {
            let image_bytes = std::fs::read(p.project.dir().join(&file.image.path)).map_err(Error::from)?;
            let found = sha256_hex(&image_bytes);
            if found != file.image.sha256 {
                return Err(Error::HashMismatch {
                    expected: file.image.sha256.clone(),
                    found,
                }
                .into());
            }
            let path = p.project.path.clone();
            *p = Pipeline::new(LoadedProject {
                file,
                path,
                image_bytes,
            })?;
        } else {
            p.project.file = file;
        }
        let rev = s.commit(&mut p)?;
        drop(p);
        Ok(reply(StatusCode::OK, rev, project_body(s)))
    })
    .await
}

#[derive(Default, Deserialize)]
#[serde(default)]
struct OptimizeRequest {
    revision: Option<u64>,
    /// Fields of the part's annotation set to replace; `null` resets one.
    annotations: Option<serde_json::Map<String, Value>>,
    weights: Option<EnergyWeights>,
    pose: Option<Pose>,
}

async fn optimize_part(State(state): State<Arc<AppState>>, Path((name, id)): Path<(String, String)>, body: Bytes) -> Response {
    with_session(state, name, move |s| {
        let req: OptimizeRequest = parse_body(&body)?;
        let started = Instant::now();
        let mut p = s.pipeline()?;
        s.check_revision(req.revision)?;
        let i = p
            .project
            .file
            .part_index(&id)
            .ok_or_else(|| ApiError::not_found(format!("no part `{id}`")))?;
        let before = p.project.file.parts[i].clone();
        let mut rec = before.clone();
        if let Some(delta) = req.annotations {
            let mut ann = serde_json::to_value(&rec.annotations).expect("serializable");
            for (k, v) in delta {
                if v.is_null() {
                    ann.as_object_mut().expect("object").remove(&k);
                } else {
                    ann[k] = v;
                }
            }
            rec.annotations = serde_json::from_value::<AnnotationSet>(ann).map_err(|e| {
                ApiError::new(StatusCode::BAD_REQUEST, "parse", format!("annotations: {e}"))
            })?;
        }
        if let Some(w) = req.weights {
            rec.weights = Some(w);
        }
        if let Some(pose) = req.pose {
            rec.pose = pose;
        }
        p.project.file.parts[i] = rec;
        let (shaped, summary) = match p.shape_one(&id) {
            Ok(r) => r,
            Err(e) => {
                p.project.file.parts[i] = before;
                return Err(e.into());
            }
        };
        let rev = if p.project.file.parts[i] != before {
            s.commit(&mut p)?
        } else {
            s.revision()
        };
        let mesh = &shaped.part.mesh;
        let mut body = serde_json::to_value(&summary).expect("serializable");
        body["revision"] = json!(rev);
        body["mesh"] = json!({
            "positions": mesh.positions().iter().flat_map(|q| [q.x, q.y, q.z]).collect::<Vec<_>>(),
            "faces": mesh.faces().iter().flatten().map(|&v| v as u32).collect::<Vec<_>>(),
        });
        body["elapsed_ms"] = json!(started.elapsed().as_secs_f64() * 1000.0);
        Ok(reply(StatusCode::OK, rev, body))
    })
    .await
}

#[derive(Default, Deserialize)]
#[serde(default)]
struct BaseRequest {
    revision: Option<u64>,
}

async fn assemble(State(state): State<Arc<AppState>>, Path(name): Path<String>, body: Bytes) -> Response {
    with_session(state, name, move |s| {
        let req: BaseRequest = parse_body(&body)?;
        let mut p = s.pipeline()?;
        s.check_revision(req.revision)?;
        let before = p.project.file.clone();
        let outcome = p.run(Stage::Merged, Hooks::default());
        let rev = if p.project.file != before { s.commit(&mut p)? } else { s.revision() };
        outcome.map_err(|e| ApiError::from(e).at(rev))?;
        let merged = p.merged.as_ref().expect("merged after the merge stage");
        let body = json!({
            "revision": rev,
            "stage": p.stage(),
            "vertices": merged.mesh.mesh.vertex_count(),
            "faces": merged.mesh.face_count(),
            "collar_faces": merged.collar.iter().filter(|&&c| c).count(),
            "warnings": p.warnings,
        });
        Ok(reply(StatusCode::OK, rev, body))
    })
    .await
}

async fn start_inpaint(State(state): State<Arc<AppState>>, Path(name): Path<String>, body: Bytes) -> Response {
    with_session(state.clone(), name.clone(), move |s| {
        let req: BaseRequest = parse_body(&body)?;
        let job = {
            let mut slot = lock(&s.job);
            if slot.as_ref().is_some_and(|j| matches!(*lock(&j.state), JobState::Running)) {
                return Err(ApiError::new(StatusCode::CONFLICT, "busy", "an inpainting job is already running"));
            }
            s.check_revision(req.revision)?;
            let job = Arc::new(Job::default());
            *slot = Some(job.clone());
            job
        };
        let session = state.session(&name)?;
        let worker = job.clone();
        std::thread::spawn(move || run_job(&session, &worker));
        Ok(reply(StatusCode::ACCEPTED, s.revision(), s.job_view(&job)))
    })
    .await
}

fn run_job(s: &Session, job: &Job) {
    let mut p = lock(&s.pipeline);
    let before = p.project.file.clone();
    let push = |pr: Progress| lock(&job.progress).push(pr);
    let hooks = Hooks {
        progress: Some(&push),
        cancel: Some(&job.cancel),
    };
    let outcome = p.run(Stage::Complete, hooks);
    if p.project.file != before {
        if let Err(e) = s.commit(&mut p) {
            log::error!("saving {} failed: {:?}", s.path.display(), e.body);
        }
    }
    *lock(&job.state) = match outcome {
        Ok(()) => JobState::Done,
        Err(Error::Cancelled) => JobState::Cancelled,
        Err(e) => JobState::Failed {
            error: ApiError::from(e).body,
        },
    };
}

fn current_job(s: &Session) -> Result<Arc<Job>, ApiError> {
    lock(&s.job).clone().ok_or_else(|| ApiError::not_found("no inpainting job has been started"))
}

async fn inpaint_status(State(state): State<Arc<AppState>>, Path(name): Path<String>) -> Response {
    with_session(state, name, |s| {
        let job = current_job(s)?;
        Ok(reply(StatusCode::OK, s.revision(), s.job_view(&job)))
    })
    .await
}

async fn cancel_inpaint(State(state): State<Arc<AppState>>, Path(name): Path<String>) -> Response {
    with_session(state, name, |s| {
        let job = current_job(s)?;
        job.cancel.store(true, Ordering::SeqCst);
        Ok(reply(StatusCode::ACCEPTED, s.revision(), s.job_view(&job)))
    })
    .await
}

async fn preview(State(state): State<Arc<AppState>>, Path((name, stage)): Path<(String, String)>) -> Response {
    with_session(state, name, move |s| {
        let stage: Stage = stage
            .parse()
            .map_err(|e: Error| ApiError::new(StatusCode::BAD_REQUEST, "unknown_stage", e.to_string()))?;
        let p = s.pipeline()?;
        let mesh = p.preview(stage).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "not_built", e.to_string()))?;
        let mut body = serde_json::to_value(&mesh).expect("serializable");
        body["revision"] = json!(s.revision());
        body["stage"] = json!(stage);
        body["page_urls"] = json!(s.page_urls(&p));
        Ok(reply(StatusCode::OK, s.revision(), body))
    })
    .await
}

async fn page(State(state): State<Arc<AppState>>, Path((name, page)): Path<(String, String)>) -> Response {
    with_session(state, name, move |s| {
        let k: usize = page
            .trim_end_matches(".png")
            .parse()
            .map_err(|_| ApiError::not_found(format!("no page `{page}`")))?;
        let p = s.pipeline()?;
        let png = match k {
            0 => {
                let mut buf = Cursor::new(Vec::new());
                p.drawing.write_to(&mut buf, image::ImageFormat::Png).map_err(Error::from)?;
                buf.into_inner()
            }
            1 => {
                let img = p
                    .result
                    .as_ref()
                    .and_then(|r| r.page.as_ref())
                    .ok_or_else(|| ApiError::not_found("no inpainting page yet"))?;
                let mut buf = Cursor::new(Vec::new());
                img.write_to(&mut buf, image::ImageFormat::Png).map_err(Error::from)?;
                buf.into_inner()
            }
            _ => return Err(ApiError::not_found(format!("no page {k}"))),
        };
        let mut r = (StatusCode::OK, [(header::CONTENT_TYPE, "image/png")], png).into_response();
        r.headers_mut().insert(REVISION_HEADER, HeaderValue::from(s.revision()));
        Ok(r)
    })
    .await
}
