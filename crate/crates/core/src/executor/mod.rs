//! Runs a workflow end to end: nodes execute in topological order, each one
//! seeing the task text and its predecessors' outputs.

mod http;
mod mock;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, ModelEntry, TokenBudget};
pub use mock::{MockBackend, FALLBACK_MODULE};

use crate::verify::{verify, TaskDescriptor, VerificationBackend};
use crate::workflow::{InvocationNode, NodeId, OperatorKind, OutputFormat, Violation, WorkflowGraph};

/// One model call.
#[derive(Clone, Debug)]
pub struct ModelRequest<'a> {
    pub task_id: &'a str,
    pub node: &'a InvocationNode,
    pub prompt: &'a str,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelResponse {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("token budget exhausted ({used} of {limit} used)")]
    Budget { used: u64, limit: u64 },
    #[error("model call failed: {detail}")]
    Execution { detail: String, raw: Option<String> },
    #[error("configuration: {0}")]
    Config(String),
}

pub trait ModelBackend: Send + Sync {
    fn invoke(&self, req: &ModelRequest<'_>) -> Result<ModelResponse, ModelError>;
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("invalid workflow: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidWorkflow(Vec<Violation>),
    #[error("node {node_id}: {source}")]
    Model {
        node_id: NodeId,
        #[source]
        source: ModelError,
    },
    #[error("node {node_id}: expected a fenced code block")]
    MissingCodeFence { node_id: NodeId },
    #[error("node {node_id}: output is not valid JSON")]
    MalformedStructured { node_id: NodeId },
    /// Carries the tokens the nodes consumed before the run came up empty.
    #[error("workflow produced no code")]
    NoCode { tokens_by_model: BTreeMap<String, u64> },
}

impl ExecError {
    pub fn is_budget(&self) -> bool {
        matches!(self, ExecError::Model { source: ModelError::Budget { .. }, .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: NodeId,
    pub operator: OperatorKind,
    pub model: String,
    pub input_digest: String,
    pub output_digest: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub records: Vec<NodeRecord>,
    pub final_code: String,
    pub total_tokens: u64,
}

impl ExecutionTrace {
    /// Digest over everything except wall-clock timings.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(r.node_id.as_str());
            h.update(&r.input_digest);
            h.update(&r.output_digest);
            h.update(r.tokens_in.to_le_bytes());
            h.update(r.tokens_out.to_le_bytes());
        }
        h.update(&self.final_code);
        hex::encode(h.finalize())
    }

    pub fn tokens_by_model(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            if r.tokens_in + r.tokens_out > 0 {
                *m.entry(r.model.clone()).or_default() += r.tokens_in + r.tokens_out;
            }
        }
        m
    }
}

pub fn digest(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// What a node hands to its successors.
#[derive(Clone, Debug, Default)]
struct Artifact {
    code: Option<String>,
    text: String,
    report: Option<String>,
}

/// Contents of the first fenced block in `text`, with the language tag
/// dropped.
pub fn extract_code_block(text: &str) -> Option<String> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim_end().to_string() + "\n")
}

fn normalize(code: &str) -> String {
    code.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fills `{spec}`, `{inputs}` and `{verification_report}`.
pub fn render_prompt(template: &str, spec: &str, inputs: &str, report: &str) -> String {
    template
        .replace("{spec}", spec)
        .replace("{inputs}", inputs)
        .replace("{verification_report}", report)
}

/// Executes `workflow` for `task`. Verification operators call `verifier`
/// and forward its report as text; the ensemble operator votes over the
/// code of its predecessors.
pub fn execute(
    workflow: &WorkflowGraph,
    task: &TaskDescriptor,
    backend: &dyn ModelBackend,
    verifier: &dyn VerificationBackend,
) -> Result<ExecutionTrace, ExecError> {
    workflow.validate().map_err(ExecError::InvalidWorkflow)?;
    let order = workflow.topological_order().expect("valid workflows are acyclic");
    let mut artifacts: BTreeMap<NodeId, Artifact> = BTreeMap::new();
    let mut records = Vec::with_capacity(order.len());
    for (pos, id) in order.iter().enumerate() {
        let node = workflow.node(id).expect("ordered ids exist");
        let preds: Vec<&NodeId> = {
            let mut p: Vec<&NodeId> = workflow.predecessors(id).collect();
            // latest producer last
            p.sort_by_key(|p| order[..pos].iter().position(|o| o == *p));
            p
        };
        let inherited = preds.iter().rev().find_map(|p| artifacts[*p].code.clone());
        let started = Instant::now();
        let (artifact, input, tokens_in, tokens_out) = match node.operator {
            op if op.is_verification() => {
                let input = inherited.clone().unwrap_or_default();
                let report = match &inherited {
                    None => format!("{op}: no code to check"),
                    Some(code) => {
                        let level = if op == OperatorKind::SyntaxValidator || task.testbench.is_none() { 1 } else { 2 };
                        match verify(code, task, level, verifier) {
                            Ok(o) => format!("{op} report:\n{o}"),
                            Err(e) => format!("{op}: {e}"),
                        }
                    }
                };
                let a = Artifact { code: inherited, text: report.clone(), report: Some(report) };
                (a, input, 0, 0)
            }
            OperatorKind::Ensemble => {
                let candidates: Vec<String> = preds.iter().filter_map(|p| artifacts[*p].code.clone()).collect();
                let input = candidates.join("\n----\n");
                let chosen = vote(&candidates, task, verifier);
                let text = chosen.clone().unwrap_or_default();
                (Artifact { code: chosen.or(inherited), text, report: None }, input, 0, 0)
            }
            _ => {
                let mut inputs = String::new();
                let mut reports = Vec::new();
                for p in &preds {
                    let a = &artifacts[*p];
                    let op = workflow.node(p).map_or("?", |n| n.operator.as_str());
                    inputs.push_str(&format!("--- input from {p} ({op}) ---\n{}\n", a.text));
                    if let Some(r) = &a.report {
                        reports.push(r.as_str());
                    }
                }
                if let Some(code) = inherited.as_deref().filter(|c| !inputs.contains(c.trim())) {
                    inputs.push_str(&format!("--- current design ---\n```verilog\n{code}```\n"));
                }
                let report = if reports.is_empty() { "none".to_string() } else { reports.join("\n") };
                let prompt = render_prompt(&node.prompt, &task.specification_text, &inputs, &report);
                let resp = backend
                    .invoke(&ModelRequest { task_id: &task.task_id, node, prompt: &prompt })
                    .map_err(|source| ExecError::Model { node_id: id.clone(), source })?;
                let own_code = match node.format {
                    OutputFormat::CodeBlock => Some(
                        extract_code_block(&resp.text)
                            .ok_or_else(|| ExecError::MissingCodeFence { node_id: id.clone() })?,
                    ),
                    OutputFormat::Structured => {
                        serde_json::from_str::<serde_json::Value>(&resp.text)
                            .map_err(|_| ExecError::MalformedStructured { node_id: id.clone() })?;
                        None
                    }
                    OutputFormat::RawText => None,
                };
                let code = if node.operator.produces_code() { own_code.or(inherited) } else { inherited };
                (Artifact { code, text: resp.text, report: None }, prompt, resp.tokens_in, resp.tokens_out)
            }
        };
        records.push(NodeRecord {
            node_id: id.clone(),
            operator: node.operator,
            model: node.model.clone(),
            input_digest: digest(&input),
            output_digest: digest(&format!("{}\u{0}{}", artifact.text, artifact.code.as_deref().unwrap_or(""))),
            tokens_in,
            tokens_out,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        artifacts.insert(id.clone(), artifact);
    }
    let total_tokens = records.iter().map(|r| r.tokens_in + r.tokens_out).sum();
    let mut trace = ExecutionTrace { records, final_code: String::new(), total_tokens };
    match artifacts[workflow.exit()].code.clone() {
        Some(code) => {
            trace.final_code = code;
            Ok(trace)
        }
        None => Err(ExecError::NoCode { tokens_by_model: trace.tokens_by_model() }),
    }
}

/// Majority vote by whitespace-normalized text. Ties go to the candidate
/// with the best pre-verification pass rate, then to the earliest one.
fn vote(candidates: &[String], task: &TaskDescriptor, verifier: &dyn VerificationBackend) -> Option<String> {
    let mut tally: Vec<(String, usize, usize)> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let key = normalize(c);
        match tally.iter_mut().find(|(k, _, _)| *k == key) {
            Some(t) => t.1 += 1,
            None => tally.push((key, 1, i)),
        }
    }
    let top = tally.iter().map(|t| t.1).max()?;
    let tied: Vec<usize> = tally.iter().filter(|t| t.1 == top).map(|t| t.2).collect();
    if tied.len() == 1 {
        return Some(candidates[tied[0]].clone());
    }
    let level = if task.testbench.is_some() { 2 } else { 1 };
    let pre_score = |c: &str| verify(c, task, level, verifier).map_or(0.0, |o| o.v1 as f64 + o.v2);
    let mut best = tied[0];
    let mut best_score = pre_score(&candidates[best]);
    for &i in &tied[1..] {
        let s = pre_score(&candidates[i]);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    Some(candidates[best].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::BuiltinBackend;
    use crate::workflow::{InvocationNode as N, OperatorKind as Op};

    fn task() -> TaskDescriptor {
        TaskDescriptor::bare("mux", "8-bit 2:1 multiplexer")
    }

    #[test]
    fn code_fence_extraction() {
        assert_eq!(extract_code_block("x\n```verilog\nmodule m;\nendmodule\n```\ny").unwrap(), "module m;\nendmodule\n");
        assert_eq!(extract_code_block("no fence"), None);
    }

    #[test]
    fn single_generate_node() {
        let mock = MockBackend::new().with_fixture("mux", Op::Generate, "```verilog\nmodule a;\nendmodule\n```");
        let wf = WorkflowGraph::single(N::of_kind("g", Op::Generate, "coder-small"));
        let t = execute(&wf, &task(), &mock, &BuiltinBackend::default()).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.final_code, "module a;\nendmodule\n");
        assert_eq!(t.total_tokens, t.records[0].tokens_in + t.records[0].tokens_out);
    }

    #[test]
    fn verification_nodes_keep_the_code() {
        let wf = WorkflowGraph::pipeline(vec![
            N::of_kind("a", Op::Generate, "coder-small"),
            N::of_kind("b", Op::SyntaxValidator, "tool"),
            N::of_kind("c", Op::WaveformAnalyzer, "tool"),
        ]);
        let t = execute(&wf, &task(), &MockBackend::new(), &BuiltinBackend::default()).unwrap();
        assert_eq!(t.final_code.trim_end(), FALLBACK_MODULE.trim_end());
        assert_eq!(t.records[1].tokens_in + t.records[2].tokens_out, 0);
    }

    #[test]
    fn missing_fence_names_the_node() {
        let mock = MockBackend::new().with_fixture("mux", Op::Generate, "module a; endmodule");
        let wf = WorkflowGraph::single(N::of_kind("gen", Op::Generate, "coder-small"));
        let e = execute(&wf, &task(), &mock, &BuiltinBackend::default()).unwrap_err();
        assert_eq!(e, ExecError::MissingCodeFence { node_id: "gen".into() });
    }

    #[test]
    fn codeless_run_reports_spent_tokens() {
        let wf = WorkflowGraph::single(N::of_kind("a", Op::AnalyzeProblem, "coder-medium"));
        match execute(&wf, &task(), &MockBackend::new(), &BuiltinBackend::default()).unwrap_err() {
            ExecError::NoCode { tokens_by_model } => assert!(tokens_by_model["coder-medium"] > 0),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn majority_vote_prefers_repeated_candidate() {
        let cands = vec!["module a;endmodule".to_string(), "module  b; endmodule".into(), "module b;\nendmodule".into()];
        assert_eq!(vote(&cands, &task(), &BuiltinBackend::default()).unwrap(), cands[1]);
    }
}
