use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{execute, ModelBackend};
use crate::failure::{FailureRecord, FailureType, SeverityTable};
use crate::objective::{score, EvaluationReport, Normalizer, ObjectiveSpec};
use crate::verify::landscape::{estimated_tokens, Landscape};
use crate::verify::{verify, TaskDescriptor, VerificationBackend, VerificationOutcome};
use crate::workflow::WorkflowGraph;

/// Verification outcome of one workflow run plus the tokens each model
/// consumed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub outcome: VerificationOutcome,
    pub tokens_by_model: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    /// Backend fault unrelated to the workflow itself.
    #[error("infrastructure: {0}")]
    Infrastructure(String),
    /// The run-wide model budget is spent; the search must stop.
    #[error("budget exhausted: {0}")]
    Budget(String),
}

/// Runs a workflow and verifies what it produced.
pub trait WorkflowEvaluator: Send + Sync {
    fn evaluate(&self, workflow: &WorkflowGraph) -> Result<Evaluation, EvalError>;
}

impl<E: WorkflowEvaluator + ?Sized> WorkflowEvaluator for Arc<E> {
    fn evaluate(&self, workflow: &WorkflowGraph) -> Result<Evaluation, EvalError> {
        (**self).evaluate(workflow)
    }
}

/// Scores workflows on a synthetic landscape.
#[derive(Clone, Copy, Debug)]
pub struct LandscapeEvaluator(pub Landscape);

impl WorkflowEvaluator for LandscapeEvaluator {
    fn evaluate(&self, workflow: &WorkflowGraph) -> Result<Evaluation, EvalError> {
        let mut tokens_by_model = BTreeMap::new();
        for n in workflow.nodes() {
            let t = estimated_tokens(n);
            if t > 0 {
                *tokens_by_model.entry(n.model.clone()).or_default() += t;
            }
        }
        Ok(Evaluation { outcome: self.0.evaluate(workflow), tokens_by_model })
    }
}

/// Executes the workflow with a model backend, then verifies the final code.
pub struct PipelineEvaluator {
    pub task: TaskDescriptor,
    pub model: Arc<dyn ModelBackend>,
    pub verifier: Arc<dyn VerificationBackend>,
    pub level: u8,
}

impl WorkflowEvaluator for PipelineEvaluator {
    fn evaluate(&self, workflow: &WorkflowGraph) -> Result<Evaluation, EvalError> {
        let trace = match execute(workflow, &self.task, self.model.as_ref(), self.verifier.as_ref()) {
            Ok(t) => t,
            Err(e) if e.is_budget() => return Err(EvalError::Budget(e.to_string())),
            Err(e @ crate::executor::ExecError::Model { .. }) => return Err(EvalError::Infrastructure(e.to_string())),
            Err(e) => {
                let tokens_by_model = match &e {
                    crate::executor::ExecError::NoCode { tokens_by_model } => tokens_by_model.clone(),
                    _ => BTreeMap::new(),
                };
                let mut outcome = VerificationOutcome::rejected(FailureType::ExecutionError, e.to_string());
                outcome.tokens_consumed = tokens_by_model.values().sum();
                return Ok(Evaluation { outcome, tokens_by_model });
            }
        };
        let mut outcome = verify(&trace.final_code, &self.task, self.level, self.verifier.as_ref())
            .map_err(|e| EvalError::Infrastructure(e.to_string()))?;
        outcome.tokens_consumed = trace.total_tokens;
        Ok(Evaluation { outcome, tokens_by_model: trace.tokens_by_model() })
    }
}

/// Memoizes a deterministic evaluator by workflow hash.
pub struct CachedEvaluator<E> {
    inner: E,
    cache: Mutex<HashMap<String, Evaluation>>,
}

impl<E: WorkflowEvaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        CachedEvaluator { inner, cache: Mutex::new(HashMap::new()) }
    }
}

impl<E: WorkflowEvaluator> WorkflowEvaluator for CachedEvaluator<E> {
    fn evaluate(&self, workflow: &WorkflowGraph) -> Result<Evaluation, EvalError> {
        let key = workflow.hash();
        if let Some(e) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(e.clone());
        }
        let e = self.inner.evaluate(workflow)?;
        self.cache.lock().expect("cache lock").insert(key, e.clone());
        Ok(e)
    }
}

/// Turns evaluations into objective reports and failure records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scoring {
    pub normalizer: Normalizer,
    /// Cost per 1000 tokens, by model name.
    pub prices: BTreeMap<String, f64>,
    /// Price for models missing from `prices`.
    pub default_price: f64,
    pub severities: SeverityTable,
}

impl Default for Scoring {
    fn default() -> Self {
        let prices = [("coder-small", 0.2), ("coder-medium", 1.0), ("reasoner-large", 3.0)]
            .into_iter()
            .map(|(m, p)| (m.to_string(), p))
            .collect();
        Scoring {
            normalizer: Normalizer::default(),
            prices,
            default_price: 1.0,
            severities: SeverityTable::default(),
        }
    }
}

impl Scoring {
    pub fn token_cost(&self, tokens_by_model: &BTreeMap<String, u64>) -> f64 {
        tokens_by_model
            .iter()
            .map(|(m, t)| *t as f64 / 1000.0 * self.prices.get(m).copied().unwrap_or(self.default_price))
            .sum()
    }

    pub fn report(&self, e: &Evaluation) -> EvaluationReport {
        e.outcome.to_report(self.token_cost(&e.tokens_by_model))
    }

    pub fn score(&self, report: &EvaluationReport, spec: &ObjectiveSpec) -> f64 {
        score(report, spec, &self.normalizer).unwrap_or(0.0)
    }

    /// Failure record for a failed evaluation, stamped with `now`.
    pub fn failure(&self, workflow: &WorkflowGraph, outcome: &VerificationOutcome, now: u64) -> Option<FailureRecord> {
        let f = outcome.failure.as_ref()?;
        let severity = self.severities.severity(f.failure_type, outcome.v2);
        FailureRecord::new(workflow.clone(), f.failure_type, severity, now).ok()
    }
}
