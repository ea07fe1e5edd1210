//! Progressive three-level verification (syntax, functional tests, boundary
//! tests) and hardware metric extraction.

mod builtin;
mod external;
pub mod landscape;
pub mod vsim;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builtin::{BuiltinBackend, ProxyConstants};
pub use external::{run_with_timeout, ExternalBackend, ExternalConfig, ToolOutput};
pub use landscape::{synthetic_landscape, Landscape, LANDSCAPE_IDS};

use crate::failure::FailureType;
use crate::objective::EvaluationReport;

/// Synthesis-derived hardware metrics. Power and slack are only present
/// when the backend can produce them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// μm²
    pub area: f64,
    /// μW
    pub power: Option<f64>,
    /// ns
    pub timing_slack: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFailure {
    pub failure_type: FailureType,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub v1: u8,
    pub v2: f64,
    pub v3: u8,
    pub metrics: Option<Metrics>,
    pub tokens_consumed: u64,
    pub failure: Option<OutcomeFailure>,
    pub tests_passed: usize,
    pub tests_total: usize,
    /// Name of an external binary that could not be launched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_tool: Option<String>,
}

impl VerificationOutcome {
    pub fn syntax_failure(detail: impl Into<String>) -> Self {
        VerificationOutcome::rejected(FailureType::SyntaxError, detail)
    }

    /// Outcome that never got past the syntax gate.
    pub fn rejected(failure_type: FailureType, detail: impl Into<String>) -> Self {
        VerificationOutcome {
            v1: 0,
            v2: 0.0,
            v3: 0,
            metrics: None,
            tokens_consumed: 0,
            failure: Some(OutcomeFailure { failure_type, detail: detail.into() }),
            tests_passed: 0,
            tests_total: 0,
            missing_tool: None,
        }
    }

    /// Checks the gating rules: V1 failure zeroes everything downstream and
    /// V3 implies a perfect V2.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.v1 > 1 || self.v3 > 1 {
            return Err("v1 and v3 are binary".into());
        }
        if !(0.0..=1.0).contains(&self.v2) {
            return Err(format!("v2 = {} outside [0, 1]", self.v2));
        }
        if self.v1 == 0 && (self.v2 != 0.0 || self.v3 != 0 || self.metrics.is_some()) {
            return Err("v1 = 0 requires v2 = 0, v3 = 0 and no metrics".into());
        }
        if self.v3 == 1 && self.v2 != 1.0 {
            return Err("v3 = 1 requires v2 = 1".into());
        }
        if self.tests_passed > self.tests_total {
            return Err("more tests passed than run".into());
        }
        if self.failure.is_none() && self.v1 == 0 {
            return Err("v1 = 0 without a recorded failure".into());
        }
        Ok(())
    }

    /// Highest level fully passed.
    pub fn level_reached(&self) -> u8 {
        if self.v1 == 0 {
            0
        } else if self.v3 == 1 {
            3
        } else if self.v2 >= 1.0 {
            2
        } else {
            1
        }
    }

    /// V3 once boundary tests pass, the V2 pass rate otherwise.
    pub fn functional_score(&self) -> f64 {
        if self.v1 == 0 {
            0.0
        } else if self.v3 == 1 {
            1.0
        } else {
            self.v2
        }
    }

    /// Whether every level up to `level` passed.
    pub fn passes(&self, level: u8) -> bool {
        self.level_reached() >= level
    }

    /// Builds the objective report; absent metrics count as unsynthesizable
    /// (penalty values) and absent power or slack as zero.
    pub fn to_report(&self, token_cost: f64) -> EvaluationReport {
        if self.v1 == 0 {
            return EvaluationReport::failed(token_cost);
        }
        let (area, power, timing_slack) = match &self.metrics {
            Some(m) => (m.area, m.power.unwrap_or(0.0), m.timing_slack.unwrap_or(0.0)),
            None => UNSYNTHESIZED,
        };
        EvaluationReport {
            functional_score: self.functional_score(),
            area,
            power,
            timing_slack,
            token_cost,
            verification_level_reached: self.level_reached(),
        }
    }
}

/// (area, power, slack) reported when synthesis produced no metrics.
pub const UNSYNTHESIZED: (f64, f64, f64) = (1.0e9, 1.0e9, -1.0e3);

impl fmt::Display for VerificationOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "v1={}", self.v1)?;
        writeln!(f, "v2={} ({}/{})", self.v2, self.tests_passed, self.tests_total)?;
        writeln!(f, "v3={}", self.v3)?;
        if let Some(m) = &self.metrics {
            write!(f, "area={}", m.area)?;
            if let Some(p) = m.power {
                write!(f, " power={p}")?;
            }
            if let Some(s) = m.timing_slack {
                write!(f, " timing_slack={s}")?;
            }
            writeln!(f)?;
        }
        if let Some(fail) = &self.failure {
            writeln!(f, "failure={}: {}", fail.failure_type, fail.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task directory {0} does not exist")]
    Missing(PathBuf),
    #[error("task {path}: cannot read {file}: {source}")]
    Read {
        path: PathBuf,
        file: &'static str,
        #[source]
        source: std::io::Error,
    },
    #[error("task {path}: reference_metrics.json: {source}")]
    Metrics {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid task: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMetrics {
    pub area: f64,
    pub power: f64,
    pub timing_slack: f64,
}

/// A hardware design task as stored in a task bundle directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub task_id: String,
    pub specification_text: String,
    pub testbench: Option<String>,
    pub boundary_tests: Option<String>,
    pub reference_metrics: Option<ReferenceMetrics>,
    /// Reference implementation, when the bundle ships one.
    pub golden: Option<String>,
}

impl TaskDescriptor {
    /// Task with no test programs, for landscape-only runs.
    pub fn bare(task_id: impl Into<String>, specification_text: impl Into<String>) -> Self {
        TaskDescriptor {
            task_id: task_id.into(),
            specification_text: specification_text.into(),
            testbench: None,
            boundary_tests: None,
            reference_metrics: None,
            golden: None,
        }
    }

    /// Loads `spec.md`, `testbench.v`, `boundary_tb.v` and the optional
    /// `reference_metrics.json` and `golden.v` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, TaskError> {
        if !dir.is_dir() {
            return Err(TaskError::Missing(dir.to_path_buf()));
        }
        let read = |file: &'static str| -> Result<Option<String>, TaskError> {
            match fs::read_to_string(dir.join(file)) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(source) => Err(TaskError::Read { path: dir.to_path_buf(), file, source }),
            }
        };
        let task_id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let reference_metrics = read("reference_metrics.json")?
            .map(|s| serde_json::from_str(&s))
            .transpose()
            .map_err(|source| TaskError::Metrics { path: dir.to_path_buf(), source })?;
        let task = TaskDescriptor {
            task_id,
            specification_text: read("spec.md")?.ok_or_else(|| {
                TaskError::Invalid(format!("{} has no spec.md", dir.display()))
            })?,
            testbench: read("testbench.v")?,
            boundary_tests: read("boundary_tb.v")?,
            reference_metrics,
            golden: read("golden.v")?,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.task_id.trim().is_empty() {
            return Err(TaskError::Invalid("empty task_id".into()));
        }
        for (name, bench) in [("testbench", &self.testbench), ("boundary_tests", &self.boundary_tests)] {
            if let Some(b) = bench {
                if count_declared_checks(b) == 0 {
                    return Err(TaskError::Invalid(format!(
                        "{}: {name} declares no PASS/FAIL checks",
                        self.task_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Number of `PASS:` messages a testbench source can print; used to reject
/// benches that would make the pass rate undefined.
fn count_declared_checks(src: &str) -> usize {
    src.matches("\"PASS:").count()
}

/// Counts of checker lines on a testbench's output stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckCounts {
    pub passed: usize,
    pub failed: usize,
}

impl CheckCounts {
    pub fn total(&self) -> usize {
        self.passed + self.failed
    }
}

/// Counts lines beginning with `PASS:` or `FAIL:` followed by a test name.
pub fn parse_checks(output: &str) -> CheckCounts {
    let mut c = CheckCounts::default();
    for line in output.lines() {
        let named = |rest: &str| !rest.trim().is_empty();
        if let Some(rest) = line.strip_prefix("PASS:") {
            if named(rest) {
                c.passed += 1;
            }
        } else if let Some(rest) = line.strip_prefix("FAIL:") {
            if named(rest) {
                c.failed += 1;
            }
        }
    }
    c
}

/// Raw output of one testbench run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BenchRun {
    pub stdout: String,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("required tool '{0}' is not installed")]
    ToolMissing(String),
    #[error("{stage} timed out after {secs} s")]
    Timeout { stage: &'static str, secs: u64 },
    /// The design and testbench did not build together.
    #[error("testbench build failed: {0}")]
    BenchBuild(String),
    #[error("synthesis failed: {0}")]
    Synthesis(String),
    #[error("unparseable tool report: {raw:?}")]
    Unparseable { raw: String },
    #[error("{0}")]
    Execution(String),
}

impl BackendError {
    pub fn failure_type(&self) -> FailureType {
        match self {
            BackendError::Timeout { .. } => FailureType::Timeout,
            BackendError::BenchBuild(_) => FailureType::SimulationMismatch,
            BackendError::Synthesis(_) => FailureType::SynthesisFailure,
            BackendError::ToolMissing(_) | BackendError::Unparseable { .. } | BackendError::Execution(_) => {
                FailureType::ExecutionError
            }
        }
    }
}

/// Something that can compile, simulate and synthesize Verilog.
/// Implementations must tolerate concurrent calls.
pub trait VerificationBackend: Send + Sync {
    fn name(&self) -> &'static str;

    /// `Ok(Err(detail))` when the code itself is malformed.
    fn check_syntax(&self, code: &str) -> Result<Result<(), String>, BackendError>;

    fn run_testbench(&self, code: &str, bench: &str) -> Result<BenchRun, BackendError>;

    fn synthesize(&self, code: &str) -> Result<Metrics, BackendError>;
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("empty source code")]
    EmptyCode,
    #[error("verification level must be 1, 2 or 3 (got {0})")]
    Level(u8),
    #[error("task {0} has no {1}")]
    MissingBench(String, &'static str),
}

/// Runs V1, then V2 when `level >= 2`, then V3 when V2 passed completely and
/// `level == 3`, stopping at the first failing level. Metrics are collected
/// whenever V1 passes.
pub fn verify(
    code: &str,
    task: &TaskDescriptor,
    level: u8,
    backend: &dyn VerificationBackend,
) -> Result<VerificationOutcome, VerifyError> {
    if code.trim().is_empty() {
        return Err(VerifyError::EmptyCode);
    }
    if !(1..=3).contains(&level) {
        return Err(VerifyError::Level(level));
    }
    if level >= 2 && task.testbench.is_none() {
        return Err(VerifyError::MissingBench(task.task_id.clone(), "testbench"));
    }
    if level == 3 && task.boundary_tests.is_none() {
        return Err(VerifyError::MissingBench(task.task_id.clone(), "boundary tests"));
    }

    let infra = |e: BackendError| {
        let mut o = VerificationOutcome::rejected(e.failure_type(), e.to_string());
        if let BackendError::ToolMissing(bin) = &e {
            o.missing_tool = Some(bin.clone());
        }
        o
    };
    match backend.check_syntax(code) {
        Err(e) => return Ok(infra(e)),
        Ok(Err(detail)) => return Ok(VerificationOutcome::syntax_failure(detail)),
        Ok(Ok(())) => {}
    }
    let mut out = VerificationOutcome {
        v1: 1,
        v2: 0.0,
        v3: 0,
        metrics: None,
        tokens_consumed: 0,
        failure: None,
        tests_passed: 0,
        tests_total: 0,
        missing_tool: None,
    };
    let fail = |out: &mut VerificationOutcome, e: BackendError| {
        if let BackendError::ToolMissing(bin) = &e {
            out.missing_tool.get_or_insert(bin.clone());
        }
        out.failure.get_or_insert(OutcomeFailure { failure_type: e.failure_type(), detail: e.to_string() });
    };

    if level >= 2 {
        let bench = task.testbench.as_deref().expect("checked above");
        match backend.run_testbench(code, bench) {
            Err(e) => fail(&mut out, e),
            Ok(run) => {
                let c = parse_checks(&run.stdout);
                if c.total() == 0 {
                    fail(&mut out, BackendError::Execution("testbench emitted no PASS/FAIL lines".into()));
                } else {
                    out.tests_passed = c.passed;
                    out.tests_total = c.total();
                    out.v2 = c.passed as f64 / c.total() as f64;
                    if c.failed > 0 {
                        out.failure = Some(OutcomeFailure {
                            failure_type: FailureType::SimulationMismatch,
                            detail: format!("{} of {} checks passed", c.passed, c.total()),
                        });
                    } else if !run.success {
                        fail(&mut out, BackendError::Execution("simulator exited with an error".into()));
                        out.v2 = 0.0;
                    }
                }
            }
        }
    }

    if level == 3 && out.v2 == 1.0 {
        let bench = task.boundary_tests.as_deref().expect("checked above");
        match backend.run_testbench(code, bench) {
            Err(e) => fail(&mut out, e),
            Ok(run) => {
                let c = parse_checks(&run.stdout);
                if run.success && c.failed == 0 && c.passed > 0 {
                    out.v3 = 1;
                } else {
                    let detail = if c.total() == 0 {
                        "boundary bench emitted no PASS/FAIL lines".to_string()
                    } else {
                        format!("{} of {} boundary checks failed", c.failed, c.total())
                    };
                    out.failure = Some(OutcomeFailure { failure_type: FailureType::BoundaryFailure, detail });
                }
            }
        }
    }

    match backend.synthesize(code) {
        Ok(m) => out.metrics = Some(m),
        Err(e) => fail(&mut out, e),
    }
    Ok(out)
}

/// Metrics for code that already passed V1.
pub fn extract_metrics(code: &str, backend: &dyn VerificationBackend) -> Result<Metrics, BackendError> {
    backend.synthesize(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_lines_need_prefix_and_name() {
        let c = parse_checks("PASS: a\nFAIL: b\n PASS: indented\nPASS:\nPASSED: x\nFAIL: c\n");
        assert_eq!(c, CheckCounts { passed: 1, failed: 2 });
    }

    #[test]
    fn report_mapping() {
        let mut o = VerificationOutcome::syntax_failure("x");
        assert_eq!(o.to_report(1.0), EvaluationReport::failed(1.0));
        o.v1 = 1;
        o.v2 = 0.7;
        o.failure = None;
        let r = o.to_report(0.0);
        assert_eq!(r.functional_score, 0.7);
        assert_eq!(r.verification_level_reached, 1);
        assert_eq!(r.area, UNSYNTHESIZED.0);
        o.v2 = 1.0;
        o.v3 = 1;
        assert_eq!(o.level_reached(), 3);
        assert_eq!(o.functional_score(), 1.0);
    }

    #[test]
    fn invariant_checker_rejects_bad_gating() {
        let mut o = VerificationOutcome::syntax_failure("x");
        assert!(o.check_invariants().is_ok());
        o.v2 = 0.5;
        assert!(o.check_invariants().is_err());
        let mut p = VerificationOutcome::syntax_failure("x");
        p.v1 = 1;
        p.v3 = 1;
        p.v2 = 0.9;
        assert!(p.check_invariants().is_err());
    }
}
