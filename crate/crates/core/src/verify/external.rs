use std::fs;
use std::io;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{BackendError, BenchRun, Metrics, VerificationBackend};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalConfig {
    pub iverilog: String,
    pub vvp: String,
    pub yosys: String,
    pub sim_timeout_secs: u64,
    pub synth_timeout_secs: u64,
    /// μm² per synthesized cell
    pub cell_area: f64,
    /// Optional program run with the design path as its last argument; its
    /// output may carry `power: <μW>` and `slack: <ns>` lines.
    pub report_command: Option<Vec<String>>,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        ExternalConfig {
            iverilog: "iverilog".into(),
            vvp: "vvp".into(),
            yosys: "yosys".into(),
            sim_timeout_secs: 30,
            synth_timeout_secs: 60,
            cell_area: 8.5,
            report_command: None,
        }
    }
}

/// Drives Icarus Verilog and Yosys. Every call works in a fresh temporary
/// directory.
#[derive(Clone, Debug, Default)]
pub struct ExternalBackend {
    pub config: ExternalConfig,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToolOutput {
    pub success: bool,
    pub stdout: String,
    pub stderr: String,
}

/// Runs `program` in `dir`, killing it after `timeout`. Output goes through
/// files so a chatty child cannot block on a full pipe.
pub fn run_with_timeout(
    program: &str,
    args: &[&str],
    dir: &Path,
    timeout: Duration,
    stage: &'static str,
) -> Result<ToolOutput, BackendError> {
    let out_path = dir.join(format!("{stage}.stdout"));
    let err_path = dir.join(format!("{stage}.stderr"));
    let io_err = |e: io::Error| BackendError::Execution(format!("{stage}: {e}"));
    let mut child = Command::new(program)
        .args(args)
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(fs::File::create(&out_path).map_err(io_err)?)
        .stderr(fs::File::create(&err_path).map_err(io_err)?)
        .spawn()
        .map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => BackendError::ToolMissing(program.to_string()),
            _ => io_err(e),
        })?;
    let status = match child.wait_timeout(timeout).map_err(io_err)? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(BackendError::Timeout { stage, secs: timeout.as_secs() });
        }
    };
    let read = |p| fs::read(p).map(|b| String::from_utf8_lossy(&b).into_owned()).map_err(io_err);
    Ok(ToolOutput { success: status.success(), stdout: read(&out_path)?, stderr: read(&err_path)? })
}

/// Cell count from a Yosys `stat` report.
pub fn parse_cell_count(report: &str) -> Result<u64, BackendError> {
    let mut found = None;
    for line in report.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("Number of cells:") {
            found = rest.trim().parse().ok().or(found);
        } else if let Some(n) = t.strip_suffix(" cells") {
            found = n.trim().parse().ok().or(found);
        }
    }
    found.ok_or_else(|| BackendError::Unparseable { raw: report.to_string() })
}

fn parse_report_value(report: &str, key: &str) -> Option<f64> {
    report.lines().find_map(|l| l.trim().strip_prefix(key)?.trim().parse().ok())
}

fn workdir() -> Result<tempfile::TempDir, BackendError> {
    tempfile::Builder::new()
        .prefix("flowsmith-")
        .tempdir()
        .map_err(|e| BackendError::Execution(format!("temp dir: {e}")))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), BackendError> {
    fs::write(dir.join(name), body).map_err(|e| BackendError::Execution(format!("write {name}: {e}")))
}

fn tail(s: &str) -> String {
    let lines: Vec<&str> = s.lines().collect();
    lines[lines.len().saturating_sub(20)..].join("\n")
}

impl ExternalBackend {
    fn sim_timeout(&self) -> Duration {
        Duration::from_secs(self.config.sim_timeout_secs)
    }

    fn compile(&self, dir: &Path, files: &[&str]) -> Result<ToolOutput, BackendError> {
        let mut args = vec!["-g2012", "-o", "out.vvp"];
        args.extend_from_slice(files);
        run_with_timeout(&self.config.iverilog, &args, dir, self.sim_timeout(), "compile")
    }
}

impl VerificationBackend for ExternalBackend {
    fn name(&self) -> &'static str {
        "external"
    }

    fn check_syntax(&self, code: &str) -> Result<Result<(), String>, BackendError> {
        let dir = workdir()?;
        write(dir.path(), "design.v", code)?;
        let out = self.compile(dir.path(), &["design.v"])?;
        Ok(if out.success { Ok(()) } else { Err(tail(&out.stderr)) })
    }

    fn run_testbench(&self, code: &str, bench: &str) -> Result<BenchRun, BackendError> {
        let dir = workdir()?;
        write(dir.path(), "design.v", code)?;
        write(dir.path(), "tb.v", bench)?;
        let built = self.compile(dir.path(), &["design.v", "tb.v"])?;
        if !built.success {
            return Err(BackendError::BenchBuild(tail(&built.stderr)));
        }
        let run = run_with_timeout(&self.config.vvp, &["out.vvp"], dir.path(), self.sim_timeout(), "simulate")?;
        Ok(BenchRun { stdout: run.stdout, success: run.success })
    }

    fn synthesize(&self, code: &str) -> Result<Metrics, BackendError> {
        let dir = workdir()?;
        write(dir.path(), "design.v", code)?;
        let timeout = Duration::from_secs(self.config.synth_timeout_secs);
        let out = run_with_timeout(
            &self.config.yosys,
            &["-p", "read_verilog design.v; synth; stat"],
            dir.path(),
            timeout,
            "synthesize",
        )?;
        if !out.success {
            return Err(BackendError::Synthesis(tail(&format!("{}{}", out.stdout, out.stderr))));
        }
        let cells = parse_cell_count(&out.stdout)?;
        let mut metrics = Metrics { area: cells as f64 * self.config.cell_area, power: None, timing_slack: None };
        if let Some(cmd) = self.config.report_command.as_ref().filter(|c| !c.is_empty()) {
            let design = dir.path().join("design.v");
            let mut args: Vec<&str> = cmd[1..].iter().map(String::as_str).collect();
            let design = design.to_string_lossy().into_owned();
            args.push(&design);
            let rep = run_with_timeout(&cmd[0], &args, dir.path(), timeout, "report")?;
            metrics.power = parse_report_value(&rep.stdout, "power:");
            metrics.timing_slack = parse_report_value(&rep.stdout, "slack:");
        }
        Ok(metrics)
    }
}
