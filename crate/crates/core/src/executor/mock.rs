use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelBackend, ModelError, ModelRequest, ModelResponse};
use crate::workflow::OperatorKind;

/// Module returned for code-producing operators when no fixture matches.
pub const FALLBACK_MODULE: &str = "module fallback(input a, output y);\n  assign y = a;\nendmodule\n";

/// Deterministic stand-in for a model API. Output depends only on the
/// task, the operator, the model name and the rendered prompt.
#[derive(Clone, Debug, Default)]
pub struct MockBackend {
    fixtures: BTreeMap<(String, OperatorKind), Vec<String>>,
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend::default()
    }

    /// Adds one canned output variant for `(task_id, operator)`.
    pub fn with_fixture(mut self, task_id: &str, op: OperatorKind, text: impl Into<String>) -> Self {
        self.fixtures.entry((task_id.to_string(), op)).or_default().push(text.into());
        self
    }

    /// Loads `<dir>/<task_id>/<operator>/*` in file-name order.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut mock = MockBackend::new();
        for task in sorted_entries(dir)? {
            let task_id = task.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            for op_dir in sorted_entries(&task)? {
                let name = op_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                let Some(op) = OperatorKind::ALL.into_iter().find(|k| k.as_str() == name) else {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{}: unknown operator directory", op_dir.display()),
                    ));
                };
                for file in sorted_entries(&op_dir)? {
                    mock = mock.with_fixture(&task_id, op, fs::read_to_string(&file)?);
                }
            }
        }
        Ok(mock)
    }

    fn respond(&self, req: &ModelRequest<'_>) -> String {
        let op = req.node.operator;
        match self.fixtures.get(&(req.task_id.to_string(), op)) {
            Some(variants) if !variants.is_empty() => {
                let mut h = Sha256::new();
                h.update(req.node.model.as_bytes());
                h.update([0]);
                h.update(op.as_str().as_bytes());
                h.update([0]);
                h.update(req.prompt.as_bytes());
                let d = h.finalize();
                let k = u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) as usize % variants.len();
                variants[k].clone()
            }
            _ if op.produces_code() => format!("```verilog\n{FALLBACK_MODULE}```\n"),
            _ => format!("{op}: no canned output for task {}", req.task_id),
        }
    }
}

fn sorted_entries(dir: &Path) -> io::Result<Vec<std::path::PathBuf>> {
    let mut v: Vec<_> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    v.sort();
    Ok(v)
}

/// Rough token count: one token per four bytes.
fn tokens(text: &str) -> u64 {
    text.len().div_ceil(4) as u64
}

impl ModelBackend for MockBackend {
    fn invoke(&self, req: &ModelRequest<'_>) -> Result<ModelResponse, ModelError> {
        let text = self.respond(req);
        Ok(ModelResponse { tokens_in: tokens(req.prompt), tokens_out: tokens(&text), text })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::InvocationNode;

    #[test]
    fn deterministic_with_fallback() {
        let mock = MockBackend::new()
            .with_fixture("t", OperatorKind::Generate, "one")
            .with_fixture("t", OperatorKind::Generate, "two");
        let node = InvocationNode::of_kind("g", OperatorKind::Generate, "m");
        let req = ModelRequest { task_id: "t", node: &node, prompt: "p" };
        assert_eq!(mock.invoke(&req).unwrap(), mock.invoke(&req).unwrap());
        let outputs: std::collections::BTreeSet<String> = (0..32)
            .map(|i| {
                let p = format!("prompt {i}");
                mock.invoke(&ModelRequest { task_id: "t", node: &node, prompt: &p }).unwrap().text
            })
            .collect();
        assert_eq!(outputs.len(), 2);
        let miss = mock.invoke(&ModelRequest { task_id: "other", node: &node, prompt: "p" }).unwrap();
        assert!(miss.text.contains(FALLBACK_MODULE));
    }
}
