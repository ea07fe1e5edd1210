//! Request and response bodies of the HTTP service.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::failure::FailureRecord;
use crate::objective::{DesignSummary, EvaluationReport, ModularityWeights, Normalizer, ObjectiveSpec};
use crate::runner::{SearchOverrides, VerifyBackendKind};
use crate::workflow::{WorkflowFragment, WorkflowGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    BadRequest,
    Config,
    MissingTool,
    Task,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl ApiError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        ApiError { kind, message: message.into(), file: None, line: None }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.file, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ApiError {}

impl From<crate::runner::RunError> for ApiError {
    fn from(e: crate::runner::RunError) -> Self {
        use crate::runner::RunError;
        match e {
            RunError::Config(c) => ApiError { kind: ErrorKind::Config, message: c.message, file: c.file, line: c.line },
            RunError::MissingTool(t) => ApiError::new(ErrorKind::MissingTool, format!("required tool not found on PATH: {t}")),
            RunError::Task(m) => ApiError::new(ErrorKind::Task, m),
            RunError::Io(e) => ApiError::new(ErrorKind::Internal, e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub workflow: WorkflowGraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub valid: bool,
    pub violations: Vec<String>,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRequest {
    pub a: WorkflowGraph,
    pub b: WorkflowGraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResponse {
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposeRequest {
    pub base: WorkflowGraph,
    pub fragment: WorkflowFragment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposeResponse {
    pub workflow: WorkflowGraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub report: EvaluationReport,
    pub spec: ObjectiveSpec,
    #[serde(default)]
    pub normalizer: Normalizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModularityRequest {
    pub design: DesignSummary,
    #[serde(default)]
    pub weights: ModularityWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModularityResponse {
    pub modularity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRequest {
    pub records: Vec<FailureRecord>,
    #[serde(default = "default_alpha")]
    pub decay_alpha: f64,
    pub workflow: WorkflowGraph,
    pub now: u64,
}

fn default_alpha() -> f64 {
    crate::failure::DEFAULT_DECAY_ALPHA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskResponse {
    pub total_risk: f64,
    /// Risk per failure type name.
    pub per_type: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub code: String,
    pub task_dir: PathBuf,
    pub level: u8,
    #[serde(default)]
    pub backend: VerifyBackendKind,
}

/// Config text plus the directory its relative paths resolve against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub config: String,
    pub base_dir: PathBuf,
    #[serde(default)]
    pub overrides: SearchOverrides,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateRequest {
    pub config: String,
    pub base_dir: PathBuf,
    #[serde(default)]
    pub seeds: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{ConfigError, RunError};

    #[test]
    fn config_errors_keep_location() {
        let mut c = ConfigError::new("bad key");
        c.file = Some("run.toml".into());
        c.line = Some(4);
        let e = ApiError::from(RunError::Config(c));
        assert_eq!(e.kind, ErrorKind::Config);
        assert_eq!(e.to_string(), "run.toml:4: bad key");
        let json = serde_json::to_string(&e).unwrap();
        assert!(json.contains("\"kind\":\"config\""));
        assert_eq!(serde_json::from_str::<ApiError>(&json).unwrap(), e);
    }

    #[test]
    fn kinds_follow_run_errors() {
        assert_eq!(ApiError::from(RunError::MissingTool("yosys".into())).kind, ErrorKind::MissingTool);
        assert_eq!(ApiError::from(RunError::Task("x".into())).kind, ErrorKind::Task);
        let plain = ApiError::new(ErrorKind::BadRequest, "nope");
        assert_eq!(plain.to_string(), "nope");
        assert!(!serde_json::to_string(&plain).unwrap().contains("line"));
    }
}
