//! JSON-over-HTTP front end for [`AnnotationService`].
//!
//! | route | who |
//! |---|---|
//! | `POST /datasets` | admin (`admin_id` in body) |
//! | `GET /datasets/{id}/stats?annotator=` | any active annotator |
//! | `GET /tasks/next?annotator=` | any active annotator; 204 when nothing is left |
//! | `POST /votes` | the voting annotator |
//! | `POST /adjudications` | admin |
//! | `GET /datasets/{id}/agreement?annotator=` | admin |
//! | `GET /datasets/{id}/export?annotator=` | admin |
//!
//! Annotators that have a token must also send `Authorization: Bearer <token>`.
//! Errors are `{"error": "...", "status": n}` with the status from
//! [`ServiceError::status_code`].

use std::collections::HashMap;
use std::sync::Arc;

use amhate_core::annotation::{AnnotationService, Annotator, ServiceError, VoteRequest};
use amhate_core::label::Label;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

/// A service error rendered as an HTTP response.
#[derive(Debug)]
pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = self.0.status_code();
        let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if code >= 500 {
            log::error!("{}", self.0);
        }
        (status, Json(json!({"error": self.0.to_string(), "status": code}))).into_response()
    }
}

type Shared = Arc<AnnotationService>;
type ApiResult<T> = Result<T, ApiError>;

/// Runs a service call off the async workers; store writes may touch disk.
async fn call<T, F>(service: &Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&AnnotationService) -> Result<T, ServiceError> + Send + 'static,
{
    let service = Arc::clone(service);
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ApiError(ServiceError::Invalid(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::Invalid(format!("request body: {e}"))))
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(|t| t.trim().to_string())
}

fn annotator_param(params: &HashMap<String, String>) -> ApiResult<String> {
    params
        .get("annotator")
        .cloned()
        .ok_or_else(|| ApiError(ServiceError::Unauthorized(String::new())))
}

fn authenticate(service: &AnnotationService, id: &str, headers: &HeaderMap) -> Result<Annotator, ServiceError> {
    service.authenticate_with_token(id, bearer(headers).as_deref())
}

fn authenticate_admin(service: &AnnotationService, id: &str, headers: &HeaderMap) -> Result<Annotator, ServiceError> {
    authenticate(service, id, headers)?;
    service.require_admin(id)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportRequest {
    admin_id: String,
    /// Pool records or labeled records, as in the JSON-lines import format.
    records: Vec<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdjudicationRequest {
    item_id: String,
    label: Label,
    adjudicator_id: String,
}

async fn import(State(service): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: ImportRequest = parse_body(&body)?;
    let summary = call(&service, move |s| {
        authenticate_admin(s, &req.admin_id, &headers)?;
        let text: String = req.records.iter().map(|r| format!("{r}\n")).collect();
        s.import_text(&text)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn stats(
    State(service): State<Shared>,
    Path(dataset): Path<String>,
    Query(params): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    let who = annotator_param(&params)?;
    let stats = call(&service, move |s| {
        authenticate(s, &who, &headers)?;
        s.stats(&dataset)
    })
    .await?;
    Ok(Json(stats))
}

async fn next_task(
    State(service): State<Shared>,
    Query(params): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let who = annotator_param(&params)?;
    let task = call(&service, move |s| {
        authenticate(s, &who, &headers)?;
        s.next_task(&who)
    })
    .await?;
    Ok(match task {
        Some(t) => Json(t).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn vote(State(service): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: VoteRequest = parse_body(&body)?;
    let item_id = req.item_id.clone();
    let status = call(&service, move |s| {
        authenticate(s, &req.annotator_id, &headers)?;
        s.submit_vote(req)
    })
    .await?;
    Ok(Json(json!({"item_id": item_id, "status": status})))
}

async fn adjudicate(State(service): State<Shared>, headers: HeaderMap, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: AdjudicationRequest = parse_body(&body)?;
    let item_id = req.item_id.clone();
    let status = call(&service, move |s| {
        authenticate_admin(s, &req.adjudicator_id, &headers)?;
        s.adjudicate(&req.item_id, req.label, &req.adjudicator_id)
    })
    .await?;
    Ok(Json(json!({"item_id": item_id, "status": status})))
}

async fn agreement(
    State(service): State<Shared>,
    Path(dataset): Path<String>,
    Query(params): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    let who = annotator_param(&params)?;
    let report = call(&service, move |s| {
        authenticate_admin(s, &who, &headers)?;
        s.agreement_report(&dataset)
    })
    .await?;
    Ok(Json(report))
}

async fn export(
    State(service): State<Shared>,
    Path(dataset): Path<String>,
    Query(params): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    let who = annotator_param(&params)?;
    let gold = call(&service, move |s| {
        authenticate_admin(s, &who, &headers)?;
        s.export_gold(&dataset)
    })
    .await?;
    Ok(Json(gold))
}

pub fn router(service: Arc<AnnotationService>) -> Router {
    Router::new()
        .route("/datasets", post(import))
        .route("/datasets/{id}/stats", get(stats))
        .route("/datasets/{id}/agreement", get(agreement))
        .route("/datasets/{id}/export", get(export))
        .route("/tasks/next", get(next_task))
        .route("/votes", post(vote))
        .route("/adjudications", post(adjudicate))
        .with_state(service)
}

/// Gives every annotator without a token a fresh random one. Returns the
/// ids that received a token.
pub fn issue_tokens(annotators: &mut [Annotator]) -> Vec<String> {
    let mut rng = rand::rng();
    annotators
        .iter_mut()
        .filter(|a| a.token.is_none())
        .map(|a| {
            a.token = Some(hex::encode(rng.random::<[u8; 16]>()));
            a.id.clone()
        })
        .collect()
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, service: Arc<AnnotationService>) -> std::io::Result<()> {
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
