//! Workflow graphs: nodes that invoke models (or verifiers), connected
//! into a single-entry, single-exit DAG.

mod fragment;
mod graph;
mod mutate;
mod operator;

pub use fragment::{compose, extract_fragments, ComposeError, FragmentCandidate, Slot, WorkflowFragment};
pub use graph::{similarity, InvocationNode, NodeId, NodeKey, Violation, WorkflowGraph, WORKFLOW_FORMAT_VERSION};
pub use mutate::{
    extend_graph, insert_node_between, mutate, remove_node, reparameterized, Mutation, MutationAction,
    MutationSpace, NodeParam,
};
pub use operator::{OperatorKind, OutputFormat, TOOL_MODEL};
