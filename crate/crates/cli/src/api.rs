//! HTTP JSON API over one store. Reads run concurrently on the blocking pool;
//! writes serialize inside the store. The server holds the store's
//! cross-process lock for its whole lifetime.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use workbench_core::analysis::{AnalysisError, AnalysisOptions, Subject};
use workbench_core::domain::PromptSetting;
use workbench_core::store::{CodebookChange, Store, StoreError, StoreLock};

use crate::{ame_text, analysis_text, current_matrix, echo_text, export_text, run_summaries, unit_views, Format, Invalid, Table};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortBusy(u16),
    #[error("store at {0} is locked by another process")]
    StoreLocked(String),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub store: PathBuf,
    pub options: AnalysisOptions,
    /// Built UI assets, served for any path outside `/api`.
    pub assets: Option<PathBuf>,
}

struct AppState {
    store: Store,
    options: AnalysisOptions,
}

pub struct Server {
    listener: TcpListener,
    router: Router,
    _lock: StoreLock,
}

impl Server {
    /// Opens and locks the store, then binds the port.
    pub async fn bind(config: ServeConfig) -> Result<Server, ServeError> {
        let store = Store::open(&config.store).map_err(ServeError::Store)?;
        let lock = store.lock().map_err(|e| match e {
            StoreError::Locked(p) => ServeError::StoreLocked(p),
            other => ServeError::Store(other),
        })?;
        let listener = TcpListener::bind(config.addr).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => ServeError::PortBusy(config.addr.port()),
            _ => ServeError::Io(e),
        })?;
        let mut router = router(store, config.options);
        if let Some(dir) = config.assets {
            router = router.fallback_service(ServeDir::new(dir));
        }
        Ok(Server { listener, router, _lock: lock })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `shutdown` resolves, then lets in-flight requests finish.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        axum::serve(self.listener, self.router).with_graceful_shutdown(shutdown).await
    }
}

pub fn router(store: Store, options: AnalysisOptions) -> Router {
    let state = Arc::new(AppState { store, options });
    Router::new()
        .route("/api/runs", get(runs))
        .route("/api/runs/{id}/hypotheses", get(hypotheses))
        .route("/api/codebook", get(codebook).post(change_codebook))
        .route("/api/assignments", get(assignments).post(assign))
        .route("/api/analysis/ame", get(ame))
        .route("/api/analysis/echo", get(echo))
        .route("/api/analysis/report", get(report))
        .route("/api/export/table3", get(table3))
        .with_state(state)
}

pub struct ApiError(anyhow::Error);

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        ApiError(e)
    }
}

fn store_error(e: &StoreError) -> (StatusCode, Value) {
    let (status, kind, extra) = match e {
        StoreError::NonBinaryCell { hypothesis_id, code, value } => (
            StatusCode::UNPROCESSABLE_ENTITY,
            "NonBinaryCell",
            json!({ "hypothesis_id": hypothesis_id, "code": code, "value": value }),
        ),
        StoreError::StaleCodebook { given, current } => {
            (StatusCode::CONFLICT, "StaleCodebook", json!({ "given": given, "current": current }))
        }
        StoreError::InvalidCodebook(_) => (StatusCode::CONFLICT, "InvalidCodebook", json!({})),
        StoreError::NoMatrix => (StatusCode::NOT_FOUND, "NoMatrix", json!({})),
        StoreError::UnknownHypothesis(id) => (StatusCode::NOT_FOUND, "UnknownHypothesis", json!({ "id": id })),
        StoreError::UnknownRun(id) => (StatusCode::NOT_FOUND, "UnknownRun", json!({ "id": id })),
        StoreError::UnknownCode(c) => (StatusCode::UNPROCESSABLE_ENTITY, "UnknownCode", json!({ "code": c })),
        StoreError::Locked(_) => (StatusCode::LOCKED, "StoreLocked", json!({})),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "StoreError", json!({})),
    };
    let mut body = extra;
    body["error"] = json!(kind);
    body["message"] = json!(e.to_string());
    (status, body)
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let err = &self.0;
        let (status, body) = if let Some(e) = err.downcast_ref::<StoreError>() {
            store_error(e)
        } else if let Some(e) = err.downcast_ref::<AnalysisError>() {
            match e {
                AnalysisError::Store(s) => store_error(s),
                AnalysisError::NoMatrix => store_error(&StoreError::NoMatrix),
                AnalysisError::UnknownFamily(_) => {
                    (StatusCode::BAD_REQUEST, json!({ "error": "UnknownFamily", "message": e.to_string() }))
                }
                _ => (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": "AnalysisError", "message": e.to_string() })),
            }
        } else if err.downcast_ref::<Invalid>().is_some() {
            (StatusCode::BAD_REQUEST, json!({ "error": "Invalid", "message": err.to_string() }))
        } else {
            (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": "Internal", "message": format!("{err:#}") }))
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(state: &Arc<AppState>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> anyhow::Result<T> + Send + 'static,
{
    let state = Arc::clone(state);
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError(anyhow::anyhow!("worker failed: {e}")))?
        .map_err(ApiError)
}

fn json_body(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn csv_body(text: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], text).into_response()
}

#[derive(Deserialize)]
struct RunsQuery {
    setting: Option<String>,
}

async fn runs(State(s): State<Arc<AppState>>, Query(q): Query<RunsQuery>) -> ApiResult<Response> {
    let setting = q
        .setting
        .map(|l| PromptSetting::parse_label(&l).map_err(|e| ApiError(Invalid(e.to_string()).into())))
        .transpose()?;
    let runs = blocking(&s, move |st| run_summaries(&st.store, setting)).await?;
    Ok(Json(runs).into_response())
}

async fn hypotheses(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let units = blocking(&s, move |st| unit_views(&st.store, &id)).await?;
    Ok(Json(units).into_response())
}

#[derive(Deserialize)]
struct CodebookQuery {
    #[serde(default)]
    all: bool,
}

async fn codebook(State(s): State<Arc<AppState>>, Query(q): Query<CodebookQuery>) -> ApiResult<Response> {
    blocking(&s, move |st| {
        Ok(if q.all {
            Json(st.store.codebooks()?).into_response()
        } else {
            Json(st.store.codebook()?).into_response()
        })
    })
    .await
}

async fn change_codebook(State(s): State<Arc<AppState>>, Json(change): Json<CodebookChange>) -> ApiResult<Response> {
    let book = blocking(&s, move |st| Ok(st.store.change_codebook(&change)?)).await?;
    Ok((StatusCode::CREATED, Json(book)).into_response())
}

#[derive(Deserialize)]
struct AssignmentsQuery {
    #[serde(default)]
    log: bool,
}

async fn assignments(State(s): State<Arc<AppState>>, Query(q): Query<AssignmentsQuery>) -> ApiResult<Response> {
    blocking(&s, move |st| {
        Ok(if q.log {
            Json(st.store.assignments()?).into_response()
        } else {
            let m = current_matrix(&st.store)?;
            let rows: Vec<Value> = m
                .rows
                .iter()
                .zip(&m.cells)
                .map(|(r, cells)| {
                    json!({ "hypothesis_id": r.hypothesis_id, "run_id": r.run_id, "setting": r.setting, "values": cells })
                })
                .collect();
            Json(json!({ "codebook_version": m.codebook_version, "columns": m.columns, "rows": rows })).into_response()
        })
    })
    .await
}

#[derive(Deserialize)]
struct AssignBody {
    hypothesis_id: String,
    code: String,
    value: Value,
    codebook_version: Option<u32>,
}

async fn assign(State(s): State<Arc<AppState>>, Json(body): Json<AssignBody>) -> ApiResult<Response> {
    let value = match &body.value {
        Value::String(v) => v.clone(),
        other => other.to_string(),
    };
    let a = blocking(&s, move |st| {
        Ok(st.store.assign(&body.hypothesis_id, &body.code, &value, body.codebook_version)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(a)).into_response())
}

#[derive(Deserialize)]
struct AmeQuery {
    family: String,
    #[serde(default)]
    subject: Option<Subject>,
    #[serde(default)]
    raw: bool,
    #[serde(default)]
    format: Option<String>,
}

fn format_param(f: Option<&str>) -> ApiResult<Format> {
    match f {
        None | Some("json") => Ok(Format::Json),
        Some("csv") => Ok(Format::Csv),
        Some(other) => Err(ApiError(Invalid(format!("unknown format {other:?}")).into())),
    }
}

async fn ame(State(s): State<Arc<AppState>>, Query(q): Query<AmeQuery>) -> ApiResult<Response> {
    let format = format_param(q.format.as_deref())?;
    let subject = q.subject.unwrap_or(Subject::Codes);
    let text = blocking(&s, move |st| ame_text(&st.store, &q.family, subject, q.raw, &st.options, format)).await?;
    Ok(match format {
        Format::Json => json_body(text),
        Format::Csv => csv_body(text),
    })
}

async fn echo(State(s): State<Arc<AppState>>) -> ApiResult<Response> {
    Ok(json_body(blocking(&s, |st| echo_text(&st.store, &st.options)).await?))
}

#[derive(Deserialize)]
struct ReportQuery {
    #[serde(default)]
    markers: bool,
    #[serde(default)]
    format: Option<String>,
}

async fn report(State(s): State<Arc<AppState>>, Query(q): Query<ReportQuery>) -> ApiResult<Response> {
    let format = format_param(q.format.as_deref())?;
    let text = blocking(&s, move |st| {
        analysis_text(&st.store, &AnalysisOptions { markers: q.markers, ..st.options }, format)
    })
    .await?;
    Ok(match format {
        Format::Json => json_body(text),
        Format::Csv => csv_body(text),
    })
}

async fn table3(State(s): State<Arc<AppState>>) -> ApiResult<Response> {
    Ok(csv_body(blocking(&s, |st| export_text(&st.store, Table::Table3)).await?))
}
