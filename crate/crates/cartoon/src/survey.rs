//! The survey service: an append-only JSON-lines log, its in-memory fold,
//! and the HTTP API over it.
//!
//! Endpoints:
//! - `POST /api/session` starts a session and returns its shuffled tasks;
//! - `GET /img/{image_id}` serves one image;
//! - `POST /api/session/{pid}/response` records one ranking;
//! - `GET /api/report` returns the mean-rank report.
//!
//! All mutations go through one lock that also owns the log file, so the
//! log is written by a single writer in the order the fold sees.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cartoon_core::survey::{
    effective_records, mean_rank_report, new_session, resolve_submission, MeanRankReport, ModelId,
    QuestionId, RankingRecord, Session, SubmitError, SurveyDefinition,
};
use cartoon_core::train::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{io_at, Error, Result};

/// One line of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogEntry {
    Session(Session),
    Response {
        #[serde(flatten)]
        record: RankingRecord,
        /// Display slot `s` showed definition image `image_perm[s]`.
        image_perm: [usize; 3],
    },
}

/// Sessions and records folded from a log.
#[derive(Debug, Clone, Default)]
pub struct LogState {
    pub sessions: Vec<Session>,
    pub records: Vec<RankingRecord>,
}

impl LogState {
    fn apply(&mut self, entry: LogEntry) {
        match entry {
            LogEntry::Session(s) => self.sessions.push(s),
            LogEntry::Response { record, .. } => self.records.push(record),
        }
    }

    pub fn effective(&self) -> Vec<RankingRecord> {
        effective_records(&self.records)
    }

    pub fn report(&self) -> MeanRankReport {
        mean_rank_report(&self.effective())
    }
}

/// Parses a log. A final line without its newline is a torn write and is
/// ignored; any other bad line is an error. Returns the state and the
/// length of the well-formed prefix.
pub fn parse_log(path: &Path, text: &str) -> Result<(LogState, usize)> {
    let mut state = LogState::default();
    let mut good = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if !line.ends_with('\n') {
            log::warn!("{}: ignoring torn final line", path.display());
            break;
        }
        if !line.trim().is_empty() {
            let entry = serde_json::from_str(line).map_err(|e| Error::Log {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            state.apply(entry);
        }
        good += line.len();
    }
    Ok((state, good))
}

pub fn read_log(path: &Path) -> Result<LogState> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    Ok(parse_log(path, &text)?.0)
}

/// Why a request failed, mapped to an HTTP status.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<SubmitError> for ServiceError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::UnknownTask(_) => ServiceError::NotFound(e.to_string()),
            SubmitError::NotBijective => ServiceError::BadRequest(e.to_string()),
            SubmitError::ImageMismatch => ServiceError::Conflict(e.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

struct Store {
    log: File,
    log_path: PathBuf,
    state: LogState,
    by_pid: HashMap<String, usize>,
}

impl Store {
    fn append(&mut self, entry: LogEntry) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(&entry).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push('\n');
        self.log
            .write_all(line.as_bytes())
            .and_then(|_| self.log.flush())
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", self.log_path.display())))?;
        if let LogEntry::Session(s) = &entry {
            self.by_pid.insert(s.participant_id.clone(), self.state.sessions.len());
        }
        self.state.apply(entry);
        Ok(())
    }
}

/// A survey definition bound to its log.
pub struct SurveyService {
    def: SurveyDefinition,
    image_root: PathBuf,
    base_seed: u64,
    store: Mutex<Store>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientImage {
    pub image_id: String,
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientTask {
    pub task_id: String,
    pub position: usize,
    pub prompt: String,
    pub images: Vec<ClientImage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionPayload {
    pub participant_id: String,
    pub tasks: Vec<ClientTask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankEntry {
    pub image_id: String,
    pub rank: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Submission {
    pub task_id: String,
    pub ranks: Vec<RankEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportCell {
    pub mean: Option<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportPayload {
    pub records: usize,
    pub means: HashMap<QuestionId, HashMap<ModelId, ReportCell>>,
    pub table: String,
}

impl ReportPayload {
    pub fn new(records: usize, report: &MeanRankReport) -> Self {
        let means = QuestionId::ALL
            .into_iter()
            .map(|q| {
                let row = ModelId::ALL
                    .into_iter()
                    .map(|m| {
                        let t = report.tally(q, m);
                        (m, ReportCell { mean: t.mean(), count: t.count })
                    })
                    .collect();
                (q, row)
            })
            .collect();
        Self {
            records,
            means,
            table: report.render(),
        }
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl SurveyService {
    /// Opens (or creates) the log at `log_path` and replays it. Image
    /// paths in `def` resolve against `image_root`.
    pub fn open(def: SurveyDefinition, image_root: &Path, log_path: &Path, base_seed: u64) -> Result<Self> {
        def.validate()?;
        for q in &def.questions {
            let lower = q.prompt.to_lowercase();
            if ModelId::ALL.iter().any(|m| lower.contains(m.as_str())) {
                return Err(Error::Config(format!("prompt `{}` names a model", q.prompt)));
            }
        }
        let mut log = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(log_path)
            .map_err(io_at(log_path))?;
        let mut text = String::new();
        log.read_to_string(&mut text).map_err(io_at(log_path))?;
        let (state, good) = parse_log(log_path, &text)?;
        if good < text.len() {
            log.set_len(good as u64).map_err(io_at(log_path))?;
            log.seek(SeekFrom::End(0)).map_err(io_at(log_path))?;
        }
        let by_pid = state
            .sessions
            .iter()
            .enumerate()
            .map(|(i, s)| (s.participant_id.clone(), i))
            .collect();
        Ok(Self {
            def,
            image_root: image_root.to_path_buf(),
            base_seed,
            store: Mutex::new(Store {
                log,
                log_path: log_path.to_path_buf(),
                state,
                by_pid,
            }),
        })
    }

    /// Reads a JSON definition file; image paths are relative to it.
    pub fn open_files(def_path: &Path, log_path: &Path, base_seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(def_path).map_err(io_at(def_path))?;
        let def: SurveyDefinition = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", def_path.display())))?;
        Self::open(def, def_path.parent().unwrap_or(Path::new(".")), log_path, base_seed)
    }

    pub fn definition(&self) -> &SurveyDefinition {
        &self.def
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Store> {
        // a panic mid-append cannot leave the fold ahead of the log
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn payload(&self, s: &Session) -> SessionPayload {
        let tasks = s
            .task_order
            .iter()
            .enumerate()
            .map(|(pos, &t)| ClientTask {
                task_id: self.def.tasks[t].id.clone(),
                position: pos + 1,
                prompt: self.def.prompt(s.question_at(&self.def, pos)).to_string(),
                images: s
                    .display_images(&self.def, t)
                    .into_iter()
                    .map(|id| ClientImage {
                        url: format!("/img/{id}"),
                        image_id: id,
                    })
                    .collect(),
            })
            .collect();
        SessionPayload {
            participant_id: s.participant_id.clone(),
            tasks,
        }
    }

    /// New session, logged before it is returned.
    pub fn create_session(&self) -> Result<SessionPayload, ServiceError> {
        let mut store = self.lock();
        let index = store.state.sessions.len() as u64;
        let mut session = new_session(&self.def, derive_seed(self.base_seed, index), now())
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        // two seeds colliding on a token would merge participants
        let mut bump = 0;
        while store.by_pid.contains_key(&session.participant_id) {
            bump += 1;
            session = new_session(&self.def, derive_seed(self.base_seed ^ bump, index), now())
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        let payload = self.payload(&session);
        store.append(LogEntry::Session(session))?;
        Ok(payload)
    }

    /// The tasks of an existing session, for clients that reload.
    pub fn session_payload(&self, pid: &str) -> Result<SessionPayload, ServiceError> {
        let store = self.lock();
        let &i = store.by_pid.get(pid).ok_or_else(|| ServiceError::NotFound(format!("unknown participant `{pid}`")))?;
        Ok(self.payload(&store.state.sessions[i]))
    }

    pub fn submit(&self, pid: &str, sub: &Submission) -> Result<(), ServiceError> {
        let mut store = self.lock();
        let &i = store.by_pid.get(pid).ok_or_else(|| ServiceError::NotFound(format!("unknown participant `{pid}`")))?;
        let session = &store.state.sessions[i];
        if sub.ranks.len() != 3 {
            return Err(ServiceError::BadRequest(format!("expected 3 ranks, got {}", sub.ranks.len())));
        }
        let ranks: Vec<(String, u8)> = sub.ranks.iter().map(|r| (r.image_id.clone(), r.rank)).collect();
        let record = resolve_submission(&self.def, session, &sub.task_id, &ranks, now())?;
        let task = self.def.task_index(&sub.task_id).expect("resolved above");
        let image_perm = session.image_perms[task];
        store.append(LogEntry::Response { record, image_perm })
    }

    pub fn image_path(&self, image_id: &str) -> Option<PathBuf> {
        let (t, k) = self.def.resolve_image(image_id)?;
        Some(self.image_root.join(&self.def.tasks[t].images[k].path))
    }

    /// Consistent view of the current state.
    pub fn snapshot(&self) -> LogState {
        self.lock().state.clone()
    }

    pub fn report(&self) -> ReportPayload {
        let effective = {
            let store = self.lock();
            store.state.effective()
        };
        ReportPayload::new(effective.len(), &mean_rank_report(&effective))
    }
}

async fn create_session(State(svc): State<Arc<SurveyService>>) -> Result<Json<SessionPayload>, ServiceError> {
    Ok(Json(svc.create_session()?))
}

async fn get_session(State(svc): State<Arc<SurveyService>>, UrlPath(pid): UrlPath<String>) -> Result<Json<SessionPayload>, ServiceError> {
    Ok(Json(svc.session_payload(&pid)?))
}

async fn submit(
    State(svc): State<Arc<SurveyService>>,
    UrlPath(pid): UrlPath<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ServiceError> {
    let sub: Submission = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    svc.submit(&pid, &sub)?;
    Ok(Json(json!({ "ok": true })))
}

async fn image(State(svc): State<Arc<SurveyService>>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let path = svc.image_path(&id).ok_or_else(|| ServiceError::NotFound(format!("unknown image `{id}`")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ServiceError::Internal(format!("image `{id}`: {e}")))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn report(State(svc): State<Arc<SurveyService>>) -> Json<ReportPayload> {
    Json(svc.report())
}

pub fn router(svc: Arc<SurveyService>) -> Router {
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{pid}", get(get_session))
        .route("/api/session/{pid}/response", post(submit))
        .route("/img/{image_id}", get(image))
        .route("/api/report", get(report))
        .with_state(svc)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, svc: Arc<SurveyService>) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).await
}
