use serde::{Deserialize, Serialize};

use super::vsim::{self, SimError};
use super::{BackendError, BenchRun, Metrics, VerificationBackend};

/// Scales that turn the interpreter's cell estimate into metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConstants {
    /// μm² per cell
    pub cell_area: f64,
    /// μW per cell
    pub cell_power: f64,
    /// ns available before the clock edge
    pub clock_budget: f64,
    /// ns per logic level
    pub gate_delay: f64,
}

impl Default for ProxyConstants {
    fn default() -> Self {
        ProxyConstants { cell_area: 8.5, cell_power: 0.8125, clock_budget: 0.42, gate_delay: 0.5 }
    }
}

/// Deterministic in-process backend built on the [`vsim`] interpreter.
#[derive(Clone, Debug, Default)]
pub struct BuiltinBackend {
    pub proxy: ProxyConstants,
}

fn backend_error(e: SimError) -> BackendError {
    BackendError::Execution(format!("built-in simulator: {e}"))
}

impl VerificationBackend for BuiltinBackend {
    fn name(&self) -> &'static str {
        "builtin"
    }

    fn check_syntax(&self, code: &str) -> Result<Result<(), String>, BackendError> {
        match vsim::parse_design(code) {
            Ok(_) => Ok(Ok(())),
            Err(e) if e.is_code_error() => Ok(Err(e.to_string())),
            Err(e) => Err(backend_error(e)),
        }
    }

    fn run_testbench(&self, code: &str, bench: &str) -> Result<BenchRun, BackendError> {
        match vsim::simulate(code, bench) {
            Ok(run) => {
                let mut stdout = run.lines.join("\n");
                stdout.push('\n');
                Ok(BenchRun { stdout, success: true })
            }
            Err(e) if e.is_code_error() => Err(BackendError::BenchBuild(e.to_string())),
            Err(e) => Err(backend_error(e)),
        }
    }

    fn synthesize(&self, code: &str) -> Result<Metrics, BackendError> {
        let modules = vsim::parse_design(code).map_err(|e| BackendError::Synthesis(e.to_string()))?;
        let (cells, depth) = modules
            .iter()
            .map(|m| m.estimate())
            .fold((0, 0), |(c, d), e| (c + e.cells, d.max(e.depth)));
        let p = &self.proxy;
        Ok(Metrics {
            area: cells as f64 * p.cell_area,
            power: Some(cells as f64 * p.cell_power),
            timing_slack: Some(p.clock_budget - depth as f64 * p.gate_delay),
        })
    }
}
