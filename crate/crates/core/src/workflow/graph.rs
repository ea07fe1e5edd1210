use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::operator::{OperatorKind, OutputFormat};

/// Version tag written into every serialized workflow document.
pub const WORKFLOW_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// One model invocation: which model, with which prompt template, at which
/// temperature, producing which output format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvocationNode {
    pub id: NodeId,
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub format: OutputFormat,
    pub operator: OperatorKind,
}

impl InvocationNode {
    /// A node of the given kind with its default prompt and format.
    pub fn of_kind(id: impl Into<NodeId>, operator: OperatorKind, model: &str) -> Self {
        InvocationNode {
            id: id.into(),
            model: model.to_string(),
            prompt: operator.default_prompt().to_string(),
            temperature: 0.7,
            format: operator.default_format(),
            operator,
        }
    }

    pub fn key(&self) -> NodeKey {
        NodeKey {
            operator: self.operator,
            model: self.model.clone(),
            format: self.format,
        }
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// Cross-graph node identity used by the similarity measure. Prompt text
/// and temperature are deliberately not part of it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey {
    pub operator: OperatorKind,
    pub model: String,
    pub format: OutputFormat,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    EmptyGraph,
    DuplicateId(NodeId),
    MissingEntry(NodeId),
    MissingExit(NodeId),
    DanglingEdge(NodeId, NodeId),
    Cycle,
    Unreachable(NodeId),
    CannotReachExit(NodeId),
    EmptyPrompt(NodeId),
    TemperatureOutOfRange(NodeId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGraph => write!(f, "empty graph"),
            Violation::DuplicateId(id) => write!(f, "duplicate id: {id}"),
            Violation::MissingEntry(id) => write!(f, "entry is not a node: {id}"),
            Violation::MissingExit(id) => write!(f, "exit is not a node: {id}"),
            Violation::DanglingEdge(a, b) => write!(f, "dangling edge: {a} -> {b}"),
            Violation::Cycle => write!(f, "cycle"),
            Violation::Unreachable(id) => write!(f, "unreachable: {id}"),
            Violation::CannotReachExit(id) => write!(f, "cannot reach exit: {id}"),
            Violation::EmptyPrompt(id) => write!(f, "empty prompt: {id}"),
            Violation::TemperatureOutOfRange(id) => write!(f, "temperature out of range: {id}"),
        }
    }
}

/// A single-entry, single-exit DAG of invocation nodes.
///
/// Nodes are kept sorted by id and edges sorted and deduplicated, so two
/// graphs with equal content have equal serializations and hashes. A graph
/// is never mutated in place; every edit returns a new graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "WorkflowDocument", try_from = "WorkflowDocument")]
pub struct WorkflowGraph {
    nodes: Vec<InvocationNode>,
    edges: Vec<(NodeId, NodeId)>,
    entry: NodeId,
    exit: NodeId,
}

impl WorkflowGraph {
    /// Builds a graph without checking it; see [`WorkflowGraph::validate`].
    pub fn from_parts(
        mut nodes: Vec<InvocationNode>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
        entry: NodeId,
        exit: NodeId,
    ) -> Self {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let edges: BTreeSet<_> = edges.into_iter().collect();
        WorkflowGraph {
            nodes,
            edges: edges.into_iter().collect(),
            entry,
            exit,
        }
    }

    pub fn empty() -> Self {
        WorkflowGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            entry: NodeId::new(""),
            exit: NodeId::new(""),
        }
    }

    pub fn single(node: InvocationNode) -> Self {
        let id = node.id.clone();
        WorkflowGraph::from_parts(vec![node], [], id.clone(), id)
    }

    /// Chains the nodes in the given order.
    pub fn pipeline(nodes: Vec<InvocationNode>) -> Self {
        if nodes.is_empty() {
            return WorkflowGraph::empty();
        }
        let entry = nodes[0].id.clone();
        let exit = nodes[nodes.len() - 1].id.clone();
        let edges: Vec<_> = nodes
            .windows(2)
            .map(|w| (w[0].id.clone(), w[1].id.clone()))
            .collect();
        WorkflowGraph::from_parts(nodes, edges, entry, exit)
    }

    pub fn nodes(&self) -> &[InvocationNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn entry(&self) -> &NodeId {
        &self.entry
    }

    pub fn exit(&self) -> &NodeId {
        &self.exit
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &NodeId) -> Option<&InvocationNode> {
        self.nodes
            .binary_search_by(|n| n.id.cmp(id))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.node(id).is_some()
    }

    pub fn has_edge(&self, from: &NodeId, to: &NodeId) -> bool {
        self.edges
            .binary_search_by(|(a, b)| (a, b).cmp(&(from, to)))
            .is_ok()
    }

    pub fn successors<'a>(&'a self, id: &'a NodeId) -> impl Iterator<Item = &'a NodeId> + 'a {
        self.edges.iter().filter(move |(a, _)| a == id).map(|(_, b)| b)
    }

    pub fn predecessors<'a>(&'a self, id: &'a NodeId) -> impl Iterator<Item = &'a NodeId> + 'a {
        self.edges.iter().filter(move |(_, b)| b == id).map(|(a, _)| a)
    }

    /// Operator kinds of consecutive node pairs, one entry per edge.
    pub fn operator_edges(&self) -> impl Iterator<Item = (OperatorKind, OperatorKind)> + '_ {
        self.edges.iter().filter_map(|(a, b)| {
            Some((self.node(a)?.operator, self.node(b)?.operator))
        })
    }

    pub fn count_operator(&self, op: OperatorKind) -> usize {
        self.nodes.iter().filter(|n| n.operator == op).count()
    }

    /// Reports every well-formedness violation; an empty list means the
    /// graph is a valid workflow.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return Err(vec![Violation::EmptyGraph]);
        }
        for pair in self.nodes.windows(2) {
            if pair[0].id == pair[1].id {
                out.push(Violation::DuplicateId(pair[0].id.clone()));
            }
        }
        for n in &self.nodes {
            if n.prompt.trim().is_empty() {
                out.push(Violation::EmptyPrompt(n.id.clone()));
            }
            if !(0.0..=2.0).contains(&n.temperature) {
                out.push(Violation::TemperatureOutOfRange(n.id.clone()));
            }
        }
        let has_entry = self.contains(&self.entry);
        let has_exit = self.contains(&self.exit);
        if !has_entry {
            out.push(Violation::MissingEntry(self.entry.clone()));
        }
        if !has_exit {
            out.push(Violation::MissingExit(self.exit.clone()));
        }
        for (a, b) in &self.edges {
            if !self.contains(a) || !self.contains(b) {
                out.push(Violation::DanglingEdge(a.clone(), b.clone()));
            }
        }
        if self.topological_order().is_none() {
            out.push(Violation::Cycle);
        }
        if has_entry {
            let seen = self.reachable_from(&self.entry, false);
            for n in &self.nodes {
                if !seen.contains(&n.id) {
                    out.push(Violation::Unreachable(n.id.clone()));
                }
            }
        }
        if has_exit {
            let seen = self.reachable_from(&self.exit, true);
            for n in &self.nodes {
                if !seen.contains(&n.id) {
                    out.push(Violation::CannotReachExit(n.id.clone()));
                }
            }
        }
        out.dedup();
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Node ids reachable from `start` along edges (reversed when
    /// `backwards`), including `start`.
    pub fn reachable_from(&self, start: &NodeId, backwards: bool) -> BTreeSet<NodeId> {
        let mut adj: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
        for (a, b) in &self.edges {
            let (from, to) = if backwards { (b, a) } else { (a, b) };
            adj.entry(from).or_default().push(to);
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id.clone()) {
                continue;
            }
            for next in adj.get(id).into_iter().flatten() {
                queue.push_back(next);
            }
        }
        seen
    }

    /// Kahn's algorithm with lexicographic tie-breaking. `None` on a cycle.
    /// Dangling edges are ignored.
    pub fn topological_order(&self) -> Option<Vec<NodeId>> {
        let mut indegree: BTreeMap<&NodeId, usize> = self.nodes.iter().map(|n| (&n.id, 0)).collect();
        for (a, b) in &self.edges {
            if indegree.contains_key(a) {
                if let Some(d) = indegree.get_mut(b) {
                    *d += 1;
                }
            }
        }
        let mut ready: BTreeSet<&NodeId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_first() {
            order.push(id.clone());
            for (a, b) in &self.edges {
                if a == id {
                    if let Some(d) = indegree.get_mut(b) {
                        *d -= 1;
                        if *d == 0 {
                            ready.insert(b);
                        }
                    }
                }
            }
        }
        // duplicate ids collapse in the map
        let distinct = indegree.len();
        (order.len() == distinct).then_some(order)
    }

    /// Longest entry-to-exit path, counted in nodes.
    pub fn depth(&self) -> usize {
        let Some(order) = self.topological_order() else {
            return 0;
        };
        let mut best: BTreeMap<&NodeId, usize> = BTreeMap::new();
        for id in &order {
            let d = self
                .predecessors(id)
                .filter_map(|p| best.get(p))
                .max()
                .copied()
                .unwrap_or(0)
                + 1;
            best.insert(id, d);
        }
        best.values().copied().max().unwrap_or(0)
    }

    /// Mints `count` node ids of the form `n<k>` unused by this graph.
    pub fn fresh_ids(&self, count: usize) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(count);
        let mut k = 0usize;
        while out.len() < count {
            let id = NodeId(format!("n{k}"));
            if !self.contains(&id) {
                out.push(id);
            }
            k += 1;
        }
        out
    }

    /// Returns a copy with one node replaced (matched by id).
    pub fn with_node(&self, node: InvocationNode) -> Option<WorkflowGraph> {
        let idx = self.nodes.binary_search_by(|n| n.id.cmp(&node.id)).ok()?;
        let mut g = self.clone();
        g.nodes[idx] = node;
        Some(g)
    }

    pub fn key_multiset(&self) -> BTreeMap<NodeKey, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.key()).or_insert(0) += 1;
        }
        m
    }

    /// Canonical JSON document; equal graphs give equal strings.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("workflow serialization is infallible")
    }

    /// Short content hash of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Jaccard similarity of the two graphs' node-key multisets.
///
/// Multiset intersection/union (sum of minima over sum of maxima) reduces
/// to the plain set formula when no key repeats inside a graph.
pub fn similarity(a: &WorkflowGraph, b: &WorkflowGraph) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let ka = a.key_multiset();
    let kb = b.key_multiset();
    let mut inter = 0usize;
    let mut union = 0usize;
    for (key, &ca) in &ka {
        let cb = kb.get(key).copied().unwrap_or(0);
        inter += ca.min(cb);
        union += ca.max(cb);
    }
    for (key, &cb) in &kb {
        if !ka.contains_key(key) {
            union += cb;
        }
    }
    inter as f64 / union as f64
}

#[derive(Serialize, Deserialize)]
struct WorkflowDocument {
    version: u32,
    entry: NodeId,
    exit: NodeId,
    nodes: Vec<InvocationNode>,
    edges: Vec<(NodeId, NodeId)>,
}

impl From<WorkflowGraph> for WorkflowDocument {
    fn from(g: WorkflowGraph) -> Self {
        WorkflowDocument {
            version: WORKFLOW_FORMAT_VERSION,
            entry: g.entry,
            exit: g.exit,
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

impl TryFrom<WorkflowDocument> for WorkflowGraph {
    type Error = String;

    fn try_from(doc: WorkflowDocument) -> Result<Self, Self::Error> {
        if doc.version != WORKFLOW_FORMAT_VERSION {
            return Err(format!(
                "unsupported workflow version {} (expected {WORKFLOW_FORMAT_VERSION})",
                doc.version
            ));
        }
        Ok(WorkflowGraph::from_parts(doc.nodes, doc.edges, doc.entry, doc.exit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, op: OperatorKind, model: &str) -> InvocationNode {
        InvocationNode::of_kind(id, op, model)
    }

    fn chain(ids: &[&str]) -> WorkflowGraph {
        WorkflowGraph::pipeline(
            ids.iter()
                .map(|id| node(id, OperatorKind::Generate, "m"))
                .collect(),
        )
    }

    #[test]
    fn single_node_is_valid() {
        let g = WorkflowGraph::single(node("A", OperatorKind::Generate, "m"));
        assert_eq!(g.validate(), Ok(()));
    }

    #[test]
    fn two_cycle_is_reported() {
        let g = WorkflowGraph::from_parts(
            vec![node("A", OperatorKind::Generate, "m"), node("B", OperatorKind::Refine, "m")],
            [("A".into(), "B".into()), ("B".into(), "A".into())],
            "A".into(),
            "B".into(),
        );
        let v = g.validate().unwrap_err();
        assert!(v.contains(&Violation::Cycle), "{v:?}");
    }

    #[test]
    fn disconnected_node_is_unreachable() {
        let g = WorkflowGraph::from_parts(
            vec![
                node("A", OperatorKind::Generate, "m"),
                node("B", OperatorKind::Refine, "m"),
                node("C", OperatorKind::Refine, "m"),
            ],
            [("A".into(), "B".into())],
            "A".into(),
            "B".into(),
        );
        let v = g.validate().unwrap_err();
        assert!(v.contains(&Violation::Unreachable("C".into())));
        assert!(v.iter().any(|x| x.to_string() == "unreachable: C"));
        assert!(!v.contains(&Violation::Unreachable("B".into())));
    }

    #[test]
    fn dangling_duplicate_and_parameter_violations() {
        let mut bad = node("A", OperatorKind::Generate, "m");
        bad.prompt = "  ".into();
        bad.temperature = 2.5;
        let g = WorkflowGraph::from_parts(
            vec![bad, node("A", OperatorKind::Refine, "m")],
            [("A".into(), "Z".into())],
            "A".into(),
            "A".into(),
        );
        let v = g.validate().unwrap_err();
        assert!(v.contains(&Violation::DuplicateId("A".into())));
        assert!(v.contains(&Violation::DanglingEdge("A".into(), "Z".into())));
        assert!(v.contains(&Violation::EmptyPrompt("A".into())));
        assert!(v.contains(&Violation::TemperatureOutOfRange("A".into())));
        assert_eq!(WorkflowGraph::empty().validate(), Err(vec![Violation::EmptyGraph]));
    }

    #[test]
    fn similarity_examples() {
        let g = chain(&["A", "B"]);
        assert_eq!(similarity(&g, &g), 1.0);

        let mk = |ops: &[OperatorKind]| {
            WorkflowGraph::pipeline(
                ops.iter()
                    .enumerate()
                    .map(|(i, op)| node(&format!("x{i}"), *op, "m"))
                    .collect(),
            )
        };
        use OperatorKind::*;
        let a = mk(&[Generate, Refine, Ensemble]);
        let b = mk(&[Refine, Ensemble, AnalyzeProblem]);
        assert_eq!(similarity(&a, &b), 0.5);
        assert_eq!(similarity(&mk(&[Generate]), &mk(&[Refine])), 0.0);
        assert_eq!(similarity(&WorkflowGraph::empty(), &WorkflowGraph::empty()), 1.0);
    }

    #[test]
    fn similarity_ignores_prompt_and_temperature() {
        let a = WorkflowGraph::single(node("A", OperatorKind::Generate, "m"));
        let mut n = node("Q", OperatorKind::Generate, "m");
        n.prompt = "entirely different wording".into();
        n.temperature = 0.1;
        assert_eq!(similarity(&a, &WorkflowGraph::single(n)), 1.0);
        let other_model = WorkflowGraph::single(node("A", OperatorKind::Generate, "m2"));
        assert_eq!(similarity(&a, &other_model), 0.0);
    }

    #[test]
    fn document_field_order_and_version() {
        let g = chain(&["A", "B"]);
        let json = g.canonical_json();
        assert!(json.starts_with(r#"{"version":1,"entry":"A","exit":"B","nodes":[{"id":"A","model":"m","prompt":"#));
        assert!(json.ends_with(r#""edges":[["A","B"]]}"#));
        let bad = json.replacen("\"version\":1", "\"version\":7", 1);
        assert!(serde_json::from_str::<WorkflowGraph>(&bad).is_err());
        let missing = json.replacen("\"version\":1,", "", 1);
        assert!(serde_json::from_str::<WorkflowGraph>(&missing).is_err());
    }

    #[test]
    fn depth_and_topological_order() {
        let g = WorkflowGraph::from_parts(
            vec![
                node("a", OperatorKind::AnalyzeProblem, "m"),
                node("b", OperatorKind::Generate, "m"),
                node("c", OperatorKind::Generate, "m"),
                node("d", OperatorKind::Ensemble, "tool"),
            ],
            [
                ("a".into(), "b".into()),
                ("a".into(), "c".into()),
                ("b".into(), "d".into()),
                ("c".into(), "d".into()),
            ],
            "a".into(),
            "d".into(),
        );
        assert!(g.is_valid());
        assert_eq!(g.depth(), 3);
        let order: Vec<_> = g.topological_order().unwrap().iter().map(|n| n.to_string()).collect();
        assert_eq!(order, ["a", "b", "c", "d"]);
    }
}
