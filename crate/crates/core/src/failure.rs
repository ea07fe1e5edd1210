//! Global memory of failed workflows and the time-decayed risk score
//! derived from it.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workflow::{similarity, WorkflowGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureType {
    SyntaxError,
    SimulationMismatch,
    BoundaryFailure,
    SynthesisFailure,
    Timeout,
    ExecutionError,
}

impl FailureType {
    pub const ALL: [FailureType; 6] = [
        FailureType::SyntaxError,
        FailureType::SimulationMismatch,
        FailureType::BoundaryFailure,
        FailureType::SynthesisFailure,
        FailureType::Timeout,
        FailureType::ExecutionError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureType::SyntaxError => "syntax_error",
            FailureType::SimulationMismatch => "simulation_mismatch",
            FailureType::BoundaryFailure => "boundary_failure",
            FailureType::SynthesisFailure => "synthesis_failure",
            FailureType::Timeout => "timeout",
            FailureType::ExecutionError => "execution_error",
        }
    }
}

impl fmt::Display for FailureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Severity assigned to each failure type. Simulation mismatches are not
/// in the table: their severity is one minus the pass rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityTable {
    pub syntax_error: f64,
    pub boundary_failure: f64,
    pub synthesis_failure: f64,
    pub timeout: f64,
    pub execution_error: f64,
}

impl Default for SeverityTable {
    fn default() -> Self {
        SeverityTable {
            syntax_error: 1.0,
            boundary_failure: 0.5,
            synthesis_failure: 0.8,
            timeout: 0.6,
            execution_error: 0.4,
        }
    }
}

impl SeverityTable {
    /// `pass_rate` is only read for simulation mismatches.
    pub fn severity(&self, kind: FailureType, pass_rate: f64) -> f64 {
        match kind {
            FailureType::SyntaxError => self.syntax_error,
            FailureType::SimulationMismatch => 1.0 - pass_rate.clamp(0.0, 1.0),
            FailureType::BoundaryFailure => self.boundary_failure,
            FailureType::SynthesisFailure => self.synthesis_failure,
            FailureType::Timeout => self.timeout,
            FailureType::ExecutionError => self.execution_error,
        }
    }

    pub fn validate(&self) -> Result<(), FailureError> {
        for v in [
            self.syntax_error,
            self.boundary_failure,
            self.synthesis_failure,
            self.timeout,
            self.execution_error,
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(FailureError::Invalid(format!("severity {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum FailureError {
    #[error("invalid failure record: {0}")]
    Invalid(String),
    #[error("checkpoint line {line}: {source}")]
    Checkpoint {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub workflow: WorkflowGraph,
    pub failure_type: FailureType,
    pub severity: f64,
    /// Search iteration at which the failure was observed.
    pub timestamp: u64,
}

impl FailureRecord {
    pub fn new(
        workflow: WorkflowGraph,
        failure_type: FailureType,
        severity: f64,
        timestamp: u64,
    ) -> Result<Self, FailureError> {
        if !(severity > 0.0 && severity <= 1.0) {
            return Err(FailureError::Invalid(format!("severity {severity} outside (0, 1]")));
        }
        Ok(FailureRecord { workflow, failure_type, severity, timestamp })
    }

    /// Largest risk this record can still contribute at time `now`.
    pub fn decayed_severity(&self, alpha: f64, now: u64) -> f64 {
        let dt = now.saturating_sub(self.timestamp) as f64;
        self.severity * (-alpha * dt).exp()
    }
}

pub const DEFAULT_DECAY_ALPHA: f64 = 0.05;

/// Append-only store of failures shared by every population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRepository {
    records: Vec<FailureRecord>,
    decay_alpha: f64,
}

impl Default for FailureRepository {
    fn default() -> Self {
        FailureRepository::new(DEFAULT_DECAY_ALPHA)
    }
}

impl FailureRepository {
    pub fn new(decay_alpha: f64) -> Self {
        assert!(decay_alpha > 0.0, "decay_alpha must be positive");
        FailureRepository { records: Vec::new(), decay_alpha }
    }

    pub fn decay_alpha(&self) -> f64 {
        self.decay_alpha
    }

    pub fn records(&self) -> &[FailureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record_failure(&mut self, rec: FailureRecord) {
        self.records.push(rec);
    }

    /// Highest decayed, similarity-weighted severity among records of
    /// `kind`; zero when there are none.
    pub fn risk(&self, w: &WorkflowGraph, kind: FailureType, now: u64) -> f64 {
        self.records
            .iter()
            .filter(|r| r.failure_type == kind)
            .map(|r| similarity(w, &r.workflow) * r.decayed_severity(self.decay_alpha, now))
            .fold(0.0, f64::max)
    }

    /// Sum of [`FailureRepository::risk`] over every failure type.
    pub fn total_risk(&self, w: &WorkflowGraph, now: u64) -> f64 {
        let mut per_type = [0.0f64; FailureType::ALL.len()];
        for r in &self.records {
            let idx = FailureType::ALL.iter().position(|k| *k == r.failure_type).unwrap();
            let bound = r.decayed_severity(self.decay_alpha, now);
            if bound <= per_type[idx] {
                continue;
            }
            let v = similarity(w, &r.workflow) * bound;
            if v > per_type[idx] {
                per_type[idx] = v;
            }
        }
        per_type.iter().sum()
    }

    /// Drops records whose decayed severity has fallen below `floor`.
    pub fn prune(&mut self, now: u64, floor: f64) -> usize {
        let before = self.records.len();
        let alpha = self.decay_alpha;
        self.records.retain(|r| r.decayed_severity(alpha, now) >= floor);
        before - self.records.len()
    }

    /// Writes one JSON record per line.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), FailureError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R, decay_alpha: f64) -> Result<Self, FailureError> {
        let mut repo = FailureRepository::new(decay_alpha);
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FailureRecord =
                serde_json::from_str(&line).map_err(|source| FailureError::Checkpoint { line: i + 1, source })?;
            let rec = FailureRecord::new(rec.workflow, rec.failure_type, rec.severity, rec.timestamp)?;
            repo.record_failure(rec);
        }
        Ok(repo)
    }
}
