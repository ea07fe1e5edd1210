//! Thin async client for the flowsmith service.

use flowsmith::api::*;
use flowsmith::runner::ablate::AblationReport;
use flowsmith::runner::SearchReport;
use flowsmith::verify::VerificationOutcome;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected status {status}: {body}")]
    Unexpected { status: u16, body: String },
}

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Client { base, http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        match serde_json::from_str::<ApiError>(&text) {
            Ok(e) => Err(ClientError::Api(e)),
            Err(_) => Err(ClientError::Unexpected { status: status.as_u16(), body: text }),
        }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn validate(&self, req: &ValidateRequest) -> Result<ValidateResponse, ClientError> {
        self.post("/v1/workflows/validate", req).await
    }

    pub async fn similarity(&self, req: &SimilarityRequest) -> Result<SimilarityResponse, ClientError> {
        self.post("/v1/workflows/similarity", req).await
    }

    pub async fn compose(&self, req: &ComposeRequest) -> Result<ComposeResponse, ClientError> {
        self.post("/v1/workflows/compose", req).await
    }

    pub async fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ClientError> {
        self.post("/v1/objectives/score", req).await
    }

    pub async fn modularity(&self, req: &ModularityRequest) -> Result<ModularityResponse, ClientError> {
        self.post("/v1/objectives/modularity", req).await
    }

    pub async fn risk(&self, req: &RiskRequest) -> Result<RiskResponse, ClientError> {
        self.post("/v1/failures/risk", req).await
    }

    pub async fn verify(&self, req: &VerifyRequest) -> Result<VerificationOutcome, ClientError> {
        self.post("/v1/verify", req).await
    }

    pub async fn search(&self, req: &SearchRequest) -> Result<SearchReport, ClientError> {
        self.post("/v1/search", req).await
    }

    pub async fn ablate(&self, req: &AblateRequest) -> Result<AblationReport, ClientError> {
        self.post("/v1/ablate", req).await
    }
}
