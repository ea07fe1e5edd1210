use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{InvocationNode, NodeId, WorkflowGraph};
use super::operator::{OperatorKind, OutputFormat, TOOL_MODEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationAction {
    AddNode,
    RemoveNode,
    ReplaceNode,
    Reparameterize,
    RewireEdge,
}

impl MutationAction {
    pub const ALL: [MutationAction; 5] = [
        MutationAction::AddNode,
        MutationAction::RemoveNode,
        MutationAction::ReplaceNode,
        MutationAction::Reparameterize,
        MutationAction::RewireEdge,
    ];
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mutation {
    Applied(WorkflowGraph),
    Inapplicable(&'static str),
}

impl Mutation {
    pub fn applied(self) -> Option<WorkflowGraph> {
        match self {
            Mutation::Applied(g) => Some(g),
            Mutation::Inapplicable(_) => None,
        }
    }
}

/// A single parameter edit on one node.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeParam {
    Model(String),
    Temperature(f64),
    Format(OutputFormat),
}

/// The choices mutations draw from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationSpace {
    pub models: Vec<String>,
    pub temperatures: Vec<f64>,
    pub operators: Vec<OperatorKind>,
}

impl Default for MutationSpace {
    fn default() -> Self {
        MutationSpace {
            models: vec!["coder-small".into(), "coder-medium".into(), "reasoner-large".into()],
            temperatures: vec![0.0, 0.2, 0.5, 0.7, 1.0],
            operators: OperatorKind::ALL.to_vec(),
        }
    }
}

impl MutationSpace {
    /// A fresh node of kind `op` with a randomly drawn model and temperature.
    pub fn fresh_node<R: Rng + ?Sized>(&self, id: NodeId, op: OperatorKind, rng: &mut R) -> InvocationNode {
        let model = if op.is_model_invoking() {
            self.models.choose(rng).map(String::as_str).unwrap_or(TOOL_MODEL)
        } else {
            TOOL_MODEL
        };
        let mut node = InvocationNode::of_kind(id, op, model);
        if op.is_model_invoking() {
            if let Some(t) = self.temperatures.choose(rng) {
                node.temperature = *t;
            }
        }
        node
    }
}

/// Applies one random instance of `action` to `graph`.
///
/// The result is always a valid workflow, or the action is reported as
/// inapplicable to this graph.
pub fn mutate<R: Rng + ?Sized>(
    graph: &WorkflowGraph,
    action: MutationAction,
    space: &MutationSpace,
    rng: &mut R,
) -> Mutation {
    if !graph.is_valid() {
        return Mutation::Inapplicable("input graph is invalid");
    }
    let out = match action {
        MutationAction::AddNode => add_node(graph, space, rng),
        MutationAction::RemoveNode => remove_random_node(graph, rng),
        MutationAction::ReplaceNode => replace_node(graph, space, rng),
        MutationAction::Reparameterize => reparameterize(graph, space, rng),
        MutationAction::RewireEdge => rewire_edge(graph, rng),
    };
    match out {
        Mutation::Applied(g) => {
            debug_assert!(g.is_valid(), "mutation {action:?} produced an invalid graph");
            if g.is_valid() {
                Mutation::Applied(g)
            } else {
                Mutation::Inapplicable("mutation produced an invalid graph")
            }
        }
        other => other,
    }
}

/// Inserts `node` on the edge `before -> after`. With `parallel` the
/// original edge is kept, forming a branch; otherwise it is replaced.
pub fn insert_node_between(
    graph: &WorkflowGraph,
    before: &NodeId,
    after: &NodeId,
    node: InvocationNode,
    parallel: bool,
) -> Option<WorkflowGraph> {
    if !graph.has_edge(before, after) || graph.contains(&node.id) {
        return None;
    }
    let id = node.id.clone();
    let mut nodes = graph.nodes().to_vec();
    nodes.push(node);
    let mut edges: BTreeSet<_> = graph.edges().iter().cloned().collect();
    if !parallel {
        edges.remove(&(before.clone(), after.clone()));
    }
    edges.insert((before.clone(), id.clone()));
    edges.insert((id, after.clone()));
    Some(WorkflowGraph::from_parts(nodes, edges, graph.entry().clone(), graph.exit().clone()))
}

/// Inserts `node` as the new exit (`append`) or the new entry.
pub fn extend_graph(graph: &WorkflowGraph, node: InvocationNode, append: bool) -> Option<WorkflowGraph> {
    if graph.contains(&node.id) {
        return None;
    }
    let id = node.id.clone();
    let mut nodes = graph.nodes().to_vec();
    nodes.push(node);
    let mut edges = graph.edges().to_vec();
    let (entry, exit) = if append {
        edges.push((graph.exit().clone(), id.clone()));
        (graph.entry().clone(), id)
    } else {
        edges.push((id.clone(), graph.entry().clone()));
        (id, graph.exit().clone())
    };
    Some(WorkflowGraph::from_parts(nodes, edges, entry, exit))
}

/// Returns a copy with one parameter of node `id` changed.
pub fn reparameterized(graph: &WorkflowGraph, id: &NodeId, param: NodeParam) -> Option<WorkflowGraph> {
    let mut node = graph.node(id)?.clone();
    match param {
        NodeParam::Model(m) => node.model = m,
        NodeParam::Temperature(t) => node.temperature = t,
        NodeParam::Format(f) => node.format = f,
    }
    graph.with_node(node)
}

/// Removes node `id`, connecting each predecessor to each successor.
pub fn remove_node(graph: &WorkflowGraph, id: &NodeId) -> Option<WorkflowGraph> {
    if graph.len() <= 1 || !graph.contains(id) {
        return None;
    }
    let preds: Vec<NodeId> = graph.predecessors(id).cloned().collect();
    let succs: Vec<NodeId> = graph.successors(id).cloned().collect();
    let mut entry = graph.entry().clone();
    let mut exit = graph.exit().clone();
    if id == graph.entry() {
        match succs.as_slice() {
            [only] => entry = only.clone(),
            _ => return None,
        }
    }
    if id == graph.exit() {
        match preds.as_slice() {
            [only] => exit = only.clone(),
            _ => return None,
        }
    }
    let nodes: Vec<_> = graph.nodes().iter().filter(|n| &n.id != id).cloned().collect();
    let mut edges: BTreeSet<_> = graph
        .edges()
        .iter()
        .filter(|(a, b)| a != id && b != id)
        .cloned()
        .collect();
    for p in &preds {
        for s in &succs {
            edges.insert((p.clone(), s.clone()));
        }
    }
    let g = WorkflowGraph::from_parts(nodes, edges, entry, exit);
    g.is_valid().then_some(g)
}

fn add_node<R: Rng + ?Sized>(graph: &WorkflowGraph, space: &MutationSpace, rng: &mut R) -> Mutation {
    let Some(&op) = space.operators.choose(rng) else {
        return Mutation::Inapplicable("no operators to add");
    };
    let id = graph.fresh_ids(1).remove(0);
    let node = space.fresh_node(id, op, rng);
    // slots: every edge, plus prepend and append
    let slot = rng.random_range(0..graph.edges().len() + 2);
    let out = if slot < graph.edges().len() {
        let (a, b) = &graph.edges()[slot];
        let parallel = rng.random_bool(0.3);
        insert_node_between(graph, a, b, node, parallel)
    } else {
        extend_graph(graph, node, slot == graph.edges().len() + 1)
    };
    out.map_or(Mutation::Inapplicable("slot rejected the node"), Mutation::Applied)
}

fn remove_random_node<R: Rng + ?Sized>(graph: &WorkflowGraph, rng: &mut R) -> Mutation {
    if graph.len() <= 1 {
        return Mutation::Inapplicable("cannot remove the only node");
    }
    let mut ids: Vec<&NodeId> = graph.nodes().iter().map(|n| &n.id).collect();
    ids.shuffle(rng);
    ids.into_iter()
        .find_map(|id| remove_node(graph, id))
        .map_or(Mutation::Inapplicable("no removable node"), Mutation::Applied)
}

fn replace_node<R: Rng + ?Sized>(graph: &WorkflowGraph, space: &MutationSpace, rng: &mut R) -> Mutation {
    let target = graph.nodes().choose(rng).expect("valid graphs are non-empty");
    let choices: Vec<OperatorKind> = space
        .operators
        .iter()
        .copied()
        .filter(|op| *op != target.operator)
        .collect();
    let Some(&op) = choices.choose(rng) else {
        return Mutation::Inapplicable("no alternative operator");
    };
    let node = space.fresh_node(target.id.clone(), op, rng);
    graph
        .with_node(node)
        .map_or(Mutation::Inapplicable("node vanished"), Mutation::Applied)
}

fn reparameterize<R: Rng + ?Sized>(graph: &WorkflowGraph, space: &MutationSpace, rng: &mut R) -> Mutation {
    let candidates: Vec<&InvocationNode> = graph
        .nodes()
        .iter()
        .filter(|n| n.operator.is_model_invoking())
        .collect();
    let Some(node) = candidates.choose(rng) else {
        return Mutation::Inapplicable("no model-invoking node");
    };
    let param = match rng.random_range(0..3) {
        0 => space
            .models
            .iter()
            .filter(|m| **m != node.model)
            .collect::<Vec<_>>()
            .choose(rng)
            .map(|m| NodeParam::Model((*m).clone())),
        1 => space
            .temperatures
            .iter()
            .filter(|t| **t != node.temperature)
            .collect::<Vec<_>>()
            .choose(rng)
            .map(|t| NodeParam::Temperature(**t)),
        _ => [OutputFormat::RawText, OutputFormat::CodeBlock, OutputFormat::Structured]
            .into_iter()
            .filter(|f| *f != node.format)
            .collect::<Vec<_>>()
            .choose(rng)
            .map(|f| NodeParam::Format(*f)),
    };
    param
        .and_then(|p| reparameterized(graph, &node.id, p))
        .map_or(Mutation::Inapplicable("no alternative parameter value"), Mutation::Applied)
}

fn rewire_edge<R: Rng + ?Sized>(graph: &WorkflowGraph, rng: &mut R) -> Mutation {
    let mut edges = graph.edges().to_vec();
    edges.shuffle(rng);
    let mut targets: Vec<&NodeId> = graph.nodes().iter().map(|n| &n.id).collect();
    targets.shuffle(rng);
    for (src, dst) in &edges {
        for &new_dst in &targets {
            if new_dst == src || new_dst == dst || graph.has_edge(src, new_dst) {
                continue;
            }
            let rewired = graph.edges().iter().map(|e| {
                if e.0 == *src && e.1 == *dst {
                    (src.clone(), new_dst.clone())
                } else {
                    e.clone()
                }
            });
            let g = WorkflowGraph::from_parts(
                graph.nodes().to_vec(),
                rewired.collect::<Vec<_>>(),
                graph.entry().clone(),
                graph.exit().clone(),
            );
            if g.is_valid() {
                return Mutation::Applied(g);
            }
        }
    }
    Mutation::Inapplicable("no edge can be rewired")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ab() -> WorkflowGraph {
        WorkflowGraph::pipeline(vec![
            InvocationNode::of_kind("A", OperatorKind::Generate, "coder-small"),
            InvocationNode::of_kind("B", OperatorKind::Refine, "coder-small"),
        ])
    }

    #[test]
    fn remove_on_single_node_is_inapplicable() {
        let g = WorkflowGraph::single(InvocationNode::of_kind("A", OperatorKind::Generate, "m"));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            mutate(&g, MutationAction::RemoveNode, &MutationSpace::default(), &mut rng),
            Mutation::Inapplicable(_)
        ));
    }

    #[test]
    fn add_validator_between_a_and_b() {
        let g = ab();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = g.fresh_ids(1).remove(0);
        let node = MutationSpace::default().fresh_node(id.clone(), OperatorKind::SyntaxValidator, &mut rng);
        let out = insert_node_between(&g, &"A".into(), &"B".into(), node, false).unwrap();
        assert!(out.is_valid());
        assert_eq!(out.len(), 3);
        assert!(out.has_edge(&"A".into(), &id) && out.has_edge(&id, &"B".into()));
        assert_eq!(out.node(&id).unwrap().model, TOOL_MODEL);
    }

    #[test]
    fn reparameterize_changes_only_temperature() {
        let g = ab();
        let out = reparameterized(&g, &"A".into(), NodeParam::Temperature(0.2)).unwrap();
        assert_eq!(g.node(&"A".into()).unwrap().temperature, 0.7);
        assert_eq!(out.node(&"A".into()).unwrap().temperature, 0.2);
        let mut expected = g.node(&"A".into()).unwrap().clone();
        expected.temperature = 0.2;
        assert_eq!(out.node(&"A".into()).unwrap(), &expected);
        assert_eq!(out.node(&"B".into()), g.node(&"B".into()));
        assert_eq!(out.edges(), g.edges());
        assert_eq!((out.entry(), out.exit()), (g.entry(), g.exit()));
    }

    #[test]
    fn remove_keeps_flow_connected() {
        let g = WorkflowGraph::pipeline(vec![
            InvocationNode::of_kind("A", OperatorKind::Generate, "m"),
            InvocationNode::of_kind("B", OperatorKind::SyntaxValidator, TOOL_MODEL),
            InvocationNode::of_kind("C", OperatorKind::Refine, "m"),
        ]);
        let out = remove_node(&g, &"B".into()).unwrap();
        assert!(out.has_edge(&"A".into(), &"C".into()));
        let out = remove_node(&g, &"A".into()).unwrap();
        assert_eq!(out.entry(), &NodeId::from("B"));
    }

    proptest! {
        #[test]
        fn random_mutation_chains_stay_valid(seed in any::<u64>(), steps in 1usize..40) {
            let space = MutationSpace::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = WorkflowGraph::single(InvocationNode::of_kind("n0", OperatorKind::Generate, "coder-small"));
            for _ in 0..steps {
                let action = *MutationAction::ALL.choose(&mut rng).unwrap();
                if let Mutation::Applied(next) = mutate(&g, action, &space, &mut rng) {
                    prop_assert!(next.is_valid(), "{:?} -> {:?}", action, next.validate());
                    g = next;
                }
            }
        }

        #[test]
        fn serialization_round_trips(seed in any::<u64>(), steps in 0usize..20) {
            let space = MutationSpace::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = WorkflowGraph::single(InvocationNode::of_kind("n0", OperatorKind::Generate, "coder-small"));
            for _ in 0..steps {
                let action = *MutationAction::ALL.choose(&mut rng).unwrap();
                if let Some(next) = mutate(&g, action, &space, &mut rng).applied() {
                    g = next;
                }
            }
            let back: WorkflowGraph = serde_json::from_str(&g.canonical_json()).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(back.hash(), g.hash());
        }
    }
}
