//! Axum service over the flowsmith core operations.

use std::collections::BTreeMap;
use std::net::SocketAddr;

use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use flowsmith::api::*;
use flowsmith::failure::{FailureRepository, FailureType};
use flowsmith::objective::{modularity, score};
use flowsmith::runner::{run_ablation_text, run_search, verify_file, SearchReport};
use flowsmith::runner::ablate::AblationReport;
use flowsmith::verify::VerificationOutcome;
use flowsmith::workflow::{compose, similarity};
use serde::de::DeserializeOwned;
use tokio::net::TcpListener;

/// JSON error body with an HTTP status chosen from its kind.
#[derive(Debug)]
pub struct Failure(pub ApiError);

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

impl From<flowsmith::runner::RunError> for Failure {
    fn from(e: flowsmith::runner::RunError) -> Self {
        Failure(e.into())
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::BadRequest | ErrorKind::Config => StatusCode::BAD_REQUEST,
            ErrorKind::MissingTool => StatusCode::FAILED_DEPENDENCY,
            ErrorKind::Task => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.0)).into_response()
    }
}

type Reply<T> = Result<Json<T>, Failure>;

fn bad(msg: impl Into<String>) -> Failure {
    Failure(ApiError::new(ErrorKind::BadRequest, msg))
}

fn body<T: DeserializeOwned>(b: Result<Json<T>, JsonRejection>) -> Result<T, Failure> {
    b.map(|Json(v)| v).map_err(|e| bad(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Failure> + Send + 'static) -> Reply<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure(ApiError::new(ErrorKind::Internal, e.to_string())))?
        .map(Json)
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn validate(b: Result<Json<ValidateRequest>, JsonRejection>) -> Reply<ValidateResponse> {
    let req = body(b)?;
    let violations: Vec<String> = match req.workflow.validate() {
        Ok(()) => Vec::new(),
        Err(v) => v.iter().map(ToString::to_string).collect(),
    };
    Ok(Json(ValidateResponse { valid: violations.is_empty(), violations, hash: req.workflow.hash() }))
}

async fn similarity_route(b: Result<Json<SimilarityRequest>, JsonRejection>) -> Reply<SimilarityResponse> {
    let req = body(b)?;
    Ok(Json(SimilarityResponse { similarity: similarity(&req.a, &req.b) }))
}

async fn compose_route(b: Result<Json<ComposeRequest>, JsonRejection>) -> Reply<ComposeResponse> {
    let req = body(b)?;
    let workflow = compose(&req.base, &req.fragment).map_err(|e| bad(e.to_string()))?;
    Ok(Json(ComposeResponse { workflow }))
}

async fn score_route(b: Result<Json<ScoreRequest>, JsonRejection>) -> Reply<ScoreResponse> {
    let req = body(b)?;
    let s = score(&req.report, &req.spec, &req.normalizer).map_err(|e| bad(e.to_string()))?;
    Ok(Json(ScoreResponse { score: s }))
}

async fn modularity_route(b: Result<Json<ModularityRequest>, JsonRejection>) -> Reply<ModularityResponse> {
    let req = body(b)?;
    let m = modularity(&req.design, &req.weights).map_err(|e| bad(e.to_string()))?;
    Ok(Json(ModularityResponse { modularity: m }))
}

async fn risk_route(b: Result<Json<RiskRequest>, JsonRejection>) -> Reply<RiskResponse> {
    let req = body(b)?;
    if !(req.decay_alpha > 0.0 && req.decay_alpha.is_finite()) {
        return Err(bad("decay_alpha must be positive"));
    }
    let mut repo = FailureRepository::new(req.decay_alpha);
    for r in req.records {
        repo.record_failure(r);
    }
    let per_type: BTreeMap<String, f64> = FailureType::ALL
        .iter()
        .map(|&k| (k.as_str().to_string(), repo.risk(&req.workflow, k, req.now)))
        .collect();
    Ok(Json(RiskResponse { total_risk: repo.total_risk(&req.workflow, req.now), per_type }))
}

async fn verify_route(b: Result<Json<VerifyRequest>, JsonRejection>) -> Reply<VerificationOutcome> {
    let req = body(b)?;
    if !(1..=3).contains(&req.level) {
        return Err(bad(format!("level must be 1, 2 or 3, got {}", req.level)));
    }
    blocking(move || Ok(verify_file(&req.code, &req.task_dir, req.level, req.backend)?)).await
}

async fn search_route(b: Result<Json<SearchRequest>, JsonRejection>) -> Reply<SearchReport> {
    let req = body(b)?;
    blocking(move || Ok(run_search(&req.config, &req.base_dir, &req.overrides)?)).await
}

async fn ablate_route(b: Result<Json<AblateRequest>, JsonRejection>) -> Reply<AblationReport> {
    let req = body(b)?;
    blocking(move || Ok(run_ablation_text(&req.config, &req.base_dir, req.seeds)?)).await
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/workflows/validate", post(validate))
        .route("/v1/workflows/similarity", post(similarity_route))
        .route("/v1/workflows/compose", post(compose_route))
        .route("/v1/objectives/score", post(score_route))
        .route("/v1/objectives/modularity", post(modularity_route))
        .route("/v1/failures/risk", post(risk_route))
        .route("/v1/verify", post(verify_route))
        .route("/v1/search", post(search_route))
        .route("/v1/ablate", post(ablate_route))
}

/// Binds `addr` and returns the bound address plus the serving future.
pub async fn bind(addr: SocketAddr) -> std::io::Result<(SocketAddr, impl std::future::Future<Output = std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tracing::info!(%local, "listening");
    Ok((local, async move { axum::serve(listener, router()).await }))
}
