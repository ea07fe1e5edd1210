use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::graph::{NodeId, Violation, WorkflowGraph};
use super::operator::OperatorKind;

/// Where a fragment is spliced into a base graph.
///
/// `Entry` means "before the base entry" and `Exit` "after the base exit".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum Slot {
    Entry,
    Exit,
    Node(NodeId),
}

const ENTRY_SENTINEL: &str = "@entry";
const EXIT_SENTINEL: &str = "@exit";

impl From<Slot> for String {
    fn from(s: Slot) -> String {
        match s {
            Slot::Entry => ENTRY_SENTINEL.to_string(),
            Slot::Exit => EXIT_SENTINEL.to_string(),
            Slot::Node(id) => id.to_string(),
        }
    }
}

impl From<String> for Slot {
    fn from(s: String) -> Slot {
        match s.as_str() {
            ENTRY_SENTINEL => Slot::Entry,
            EXIT_SENTINEL => Slot::Exit,
            _ => Slot::Node(NodeId::new(s)),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from(self.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowFragment {
    pub subgraph: WorkflowGraph,
    pub attach_before: Slot,
    pub attach_after: Slot,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComposeError {
    #[error("attach slot names a nonexistent node: {0}")]
    UnknownSlot(NodeId),
    #[error("invalid slot combination: before={0}, after={1}")]
    BadSlots(Slot, Slot),
    #[error("composition would create a cycle")]
    Cycle,
    #[error("base workflow is invalid: {0:?}")]
    InvalidBase(Vec<Violation>),
    #[error("fragment is invalid: {0:?}")]
    InvalidFragment(Vec<Violation>),
    #[error("composed workflow is invalid: {0:?}")]
    Invalid(Vec<Violation>),
}

/// Splices `fragment` into `base` between its two attach slots.
///
/// Fragment nodes are re-minted with ids unused by `base`. An existing
/// edge `before -> after` is removed so the flow is rewired through the
/// fragment.
pub fn compose(base: &WorkflowGraph, fragment: &WorkflowFragment) -> Result<WorkflowGraph, ComposeError> {
    base.validate().map_err(ComposeError::InvalidBase)?;
    if fragment.subgraph.is_empty() {
        return Ok(base.clone());
    }
    fragment
        .subgraph
        .validate()
        .map_err(ComposeError::InvalidFragment)?;
    for slot in [&fragment.attach_before, &fragment.attach_after] {
        if let Slot::Node(id) = slot {
            if !base.contains(id) {
                return Err(ComposeError::UnknownSlot(id.clone()));
            }
        }
    }

    let frag = &fragment.subgraph;
    let fresh = base.fresh_ids(frag.len());
    let rename: BTreeMap<&NodeId, NodeId> = frag
        .nodes()
        .iter()
        .map(|n| &n.id)
        .zip(fresh)
        .collect();
    let frag_entry = rename[frag.entry()].clone();
    let frag_exit = rename[frag.exit()].clone();

    let mut nodes = base.nodes().to_vec();
    nodes.extend(frag.nodes().iter().map(|n| {
        let mut n = n.clone();
        n.id = rename[&n.id].clone();
        n
    }));
    let mut edges: BTreeSet<(NodeId, NodeId)> = base.edges().iter().cloned().collect();
    edges.extend(
        frag.edges()
            .iter()
            .map(|(a, b)| (rename[a].clone(), rename[b].clone())),
    );

    let mut entry = base.entry().clone();
    let mut exit = base.exit().clone();
    match (&fragment.attach_before, &fragment.attach_after) {
        (Slot::Node(u), Slot::Node(v)) => {
            edges.remove(&(u.clone(), v.clone()));
            edges.insert((u.clone(), frag_entry));
            edges.insert((frag_exit, v.clone()));
        }
        (Slot::Entry, Slot::Node(v)) => {
            edges.insert((frag_exit, v.clone()));
            entry = frag_entry;
        }
        (Slot::Node(u), Slot::Exit) => {
            edges.insert((u.clone(), frag_entry));
            exit = frag_exit;
        }
        (before, after) => return Err(ComposeError::BadSlots(before.clone(), after.clone())),
    }

    let composed = WorkflowGraph::from_parts(nodes, edges, entry, exit);
    match composed.validate() {
        Ok(()) => Ok(composed),
        Err(v) if v.contains(&Violation::Cycle) => Err(ComposeError::Cycle),
        Err(v) => Err(ComposeError::Invalid(v)),
    }
}

/// A fragment cut out of a source workflow, remembering the operator kinds
/// that surrounded it so it can be anchored at an analogous place in
/// another workflow.
#[derive(Clone, Debug, PartialEq)]
pub struct FragmentCandidate {
    pub subgraph: WorkflowGraph,
    pub preceded_by: Option<OperatorKind>,
    pub followed_by: Option<OperatorKind>,
}

/// Samples up to `max` distinct connected convex chains of 1 to 3 nodes
/// from `source`.
pub fn extract_fragments<R: Rng + ?Sized>(
    source: &WorkflowGraph,
    max: usize,
    rng: &mut R,
) -> Vec<FragmentCandidate> {
    let mut chains: Vec<Vec<NodeId>> = Vec::new();
    for start in source.nodes() {
        let mut frontier = vec![vec![start.id.clone()]];
        while let Some(path) = frontier.pop() {
            if is_convex(source, &path) {
                chains.push(path.clone());
            }
            if path.len() < 3 {
                let last = path.last().unwrap();
                for next in source.successors(last) {
                    let mut p = path.clone();
                    p.push(next.clone());
                    frontier.push(p);
                }
            }
        }
    }
    chains.sort();
    chains.dedup();
    chains.shuffle(rng);

    let mut out: Vec<FragmentCandidate> = Vec::new();
    for chain in chains {
        if out.len() >= max {
            break;
        }
        let candidate = cut_chain(source, &chain);
        if out.iter().all(|c| c.subgraph != candidate.subgraph) {
            out.push(candidate);
        }
    }
    out
}

fn is_convex(g: &WorkflowGraph, set: &[NodeId]) -> bool {
    let members: BTreeSet<&NodeId> = set.iter().collect();
    let mut below = BTreeSet::new();
    let mut above = BTreeSet::new();
    for id in set {
        below.extend(g.reachable_from(id, false));
        above.extend(g.reachable_from(id, true));
    }
    !g.nodes()
        .iter()
        .any(|n| !members.contains(&n.id) && below.contains(&n.id) && above.contains(&n.id))
}

fn cut_chain(source: &WorkflowGraph, chain: &[NodeId]) -> FragmentCandidate {
    let nodes = chain
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut n = source.node(id).expect("chain nodes exist").clone();
            n.id = NodeId::new(format!("f{i}"));
            n
        })
        .collect();
    let head = &chain[0];
    let tail = &chain[chain.len() - 1];
    let operator_of = |id: &NodeId| source.node(id).map(|n| n.operator);
    FragmentCandidate {
        subgraph: WorkflowGraph::pipeline(nodes),
        preceded_by: source.predecessors(head).next().and_then(operator_of),
        followed_by: source.successors(tail).next().and_then(operator_of),
    }
}

impl FragmentCandidate {
    /// Chooses attach slots in `target` that mirror the fragment's original
    /// surroundings, falling back to appending after the target's exit.
    pub fn anchor(&self, target: &WorkflowGraph) -> WorkflowFragment {
        let (before, after) = self.anchor_slots(target);
        WorkflowFragment {
            subgraph: self.subgraph.clone(),
            attach_before: before,
            attach_after: after,
        }
    }

    fn anchor_slots(&self, target: &WorkflowGraph) -> (Slot, Slot) {
        let op = |id: &NodeId| target.node(id).map(|n| n.operator);
        if let (Some(pre), Some(post)) = (self.preceded_by, self.followed_by) {
            if let Some((u, v)) = target
                .edges()
                .iter()
                .find(|(u, v)| op(u) == Some(pre) && op(v) == Some(post))
            {
                return (Slot::Node(u.clone()), Slot::Node(v.clone()));
            }
        }
        if let Some(pre) = self.preceded_by {
            if let Some(u) = target.nodes().iter().find(|n| n.operator == pre) {
                return match target.successors(&u.id).next() {
                    Some(v) => (Slot::Node(u.id.clone()), Slot::Node(v.clone())),
                    None => (Slot::Node(u.id.clone()), Slot::Exit),
                };
            }
        }
        if let Some(post) = self.followed_by {
            if let Some(v) = target.nodes().iter().find(|n| n.operator == post) {
                return match target.predecessors(&v.id).next() {
                    Some(u) => (Slot::Node(u.clone()), Slot::Node(v.id.clone())),
                    None => (Slot::Entry, Slot::Node(v.id.clone())),
                };
            }
        }
        (Slot::Node(target.exit().clone()), Slot::Exit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::InvocationNode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(id: &str, op: OperatorKind) -> InvocationNode {
        InvocationNode::of_kind(id, op, "m")
    }

    fn ab() -> WorkflowGraph {
        WorkflowGraph::pipeline(vec![node("A", OperatorKind::Generate), node("B", OperatorKind::Refine)])
    }

    fn frag(sub: WorkflowGraph, before: Slot, after: Slot) -> WorkflowFragment {
        WorkflowFragment { subgraph: sub, attach_before: before, attach_after: after }
    }

    #[test]
    fn empty_fragment_is_identity() {
        let base = ab();
        let out = compose(&base, &frag(WorkflowGraph::empty(), Slot::Entry, Slot::Exit)).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn splice_between_two_nodes() {
        let x = WorkflowGraph::single(node("X", OperatorKind::SyntaxValidator));
        let out = compose(&ab(), &frag(x, Slot::Node("A".into()), Slot::Node("B".into()))).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.edges().len(), 2);
        assert!(!out.has_edge(&"A".into(), &"B".into()));
        let order = out.topological_order().unwrap();
        assert_eq!(out.node(&order[1]).unwrap().operator, OperatorKind::SyntaxValidator);
        assert_eq!(out.entry(), &NodeId::from("A"));
        assert_eq!(out.exit(), &NodeId::from("B"));
    }

    #[test]
    fn missing_slot_is_rejected() {
        let x = WorkflowGraph::single(node("X", OperatorKind::Refine));
        let err = compose(&ab(), &frag(x, Slot::Node("missing".into()), Slot::Node("B".into()))).unwrap_err();
        assert_eq!(err, ComposeError::UnknownSlot("missing".into()));
    }

    #[test]
    fn backwards_splice_is_a_cycle() {
        let x = WorkflowGraph::single(node("X", OperatorKind::Refine));
        let err = compose(&ab(), &frag(x, Slot::Node("B".into()), Slot::Node("A".into()))).unwrap_err();
        assert_eq!(err, ComposeError::Cycle);
    }

    #[test]
    fn sentinel_slots_move_entry_and_exit() {
        let x = WorkflowGraph::single(node("X", OperatorKind::AnalyzeProblem));
        let pre = compose(&ab(), &frag(x.clone(), Slot::Entry, Slot::Node("A".into()))).unwrap();
        assert_eq!(pre.node(pre.entry()).unwrap().operator, OperatorKind::AnalyzeProblem);
        let post = compose(&ab(), &frag(x.clone(), Slot::Node("B".into()), Slot::Exit)).unwrap();
        assert_eq!(post.node(post.exit()).unwrap().operator, OperatorKind::AnalyzeProblem);
        // prepending in front of a non-entry node leaves two sources
        assert!(matches!(
            compose(&ab(), &frag(x, Slot::Entry, Slot::Node("B".into()))),
            Err(ComposeError::Invalid(_))
        ));
    }

    #[test]
    fn slot_serialization() {
        let json = serde_json::to_string(&[Slot::Entry, Slot::Exit, Slot::Node("A".into())]).unwrap();
        assert_eq!(json, r#"["@entry","@exit","A"]"#);
        let back: Vec<Slot> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, [Slot::Entry, Slot::Exit, Slot::Node("A".into())]);
    }

    #[test]
    fn fragments_are_small_convex_chains() {
        // a -> b -> d and a -> c -> d: {a, d} is not convex and never a chain
        let g = WorkflowGraph::from_parts(
            vec![
                node("a", OperatorKind::AnalyzeProblem),
                node("b", OperatorKind::Generate),
                node("c", OperatorKind::Generate),
                node("d", OperatorKind::Ensemble),
            ],
            [("a".into(), "b".into()), ("a".into(), "c".into()), ("b".into(), "d".into()), ("c".into(), "d".into())],
            "a".into(),
            "d".into(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frags = extract_fragments(&g, 50, &mut rng);
        assert!(!frags.is_empty());
        for f in &frags {
            assert!(f.subgraph.is_valid());
            assert!((1..=3).contains(&f.subgraph.len()));
        }
        // a->b->d would skip over c which lies between a and d
        assert!(frags.iter().all(|f| f.subgraph.len() < 3));
        assert!(extract_fragments(&g, 2, &mut rng).len() <= 2);
    }

    #[test]
    fn anchoring_mirrors_context() {
        let source = WorkflowGraph::pipeline(vec![
            node("g", OperatorKind::Generate),
            node("s", OperatorKind::SyntaxValidator),
            node("r", OperatorKind::Refine),
        ]);
        let cand = cut_chain(&source, &["s".into()]);
        assert_eq!(cand.preceded_by, Some(OperatorKind::Generate));
        assert_eq!(cand.followed_by, Some(OperatorKind::Refine));
        let target = ab();
        let f = cand.anchor(&target);
        assert_eq!((f.attach_before.clone(), f.attach_after.clone()), (Slot::Node("A".into()), Slot::Node("B".into())));
        assert!(compose(&target, &f).unwrap().is_valid());

        let lone = WorkflowGraph::single(node("z", OperatorKind::TestCaseAuthor));
        let f = cand.anchor(&lone);
        assert_eq!(f.attach_after, Slot::Exit);
        assert!(compose(&lone, &f).unwrap().is_valid());
    }
}
