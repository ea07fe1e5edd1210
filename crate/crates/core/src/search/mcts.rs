use std::fmt::Write as _;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::engine::{diversity, PopulationSnapshot};
use crate::failure::FailureRepository;
use crate::objective::ObjectiveSpec;
use crate::workflow::{mutate, MutationAction, MutationSpace, WorkflowGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub objective: ObjectiveSpec,
    #[serde(default = "defaults::c")]
    pub exploration_c: f64,
    #[serde(default = "defaults::lambda")]
    pub risk_lambda: f64,
    #[serde(default = "defaults::beta")]
    pub diversity_beta: f64,
    #[serde(default = "defaults::theta")]
    pub risk_precheck_threshold: f64,
    #[serde(default = "defaults::width")]
    pub expansion_width: usize,
}

mod defaults {
    pub fn c() -> f64 {
        1.414
    }
    pub fn lambda() -> f64 {
        0.5
    }
    pub fn beta() -> f64 {
        0.3
    }
    pub fn theta() -> f64 {
        0.7
    }
    pub fn width() -> usize {
        4
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("population config: {0}")]
pub struct ConfigError(pub String);

impl PopulationConfig {
    pub fn new(objective: ObjectiveSpec) -> Self {
        PopulationConfig {
            objective,
            exploration_c: defaults::c(),
            risk_lambda: defaults::lambda(),
            diversity_beta: defaults::beta(),
            risk_precheck_threshold: defaults::theta(),
            expansion_width: defaults::width(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.objective.validate().map_err(|e| ConfigError(e.to_string()))?;
        let bad = |m: &str| Err(ConfigError(m.to_string()));
        if self.exploration_c.is_nan() || self.exploration_c <= 0.0 {
            return bad("exploration_c must be positive");
        }
        if [self.risk_lambda, self.diversity_beta].iter().any(|v| v.is_nan() || *v < 0.0) {
            return bad("risk_lambda and diversity_beta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.risk_precheck_threshold) {
            return bad("risk_precheck_threshold must lie in [0, 1]");
        }
        if self.expansion_width == 0 {
            return bad("expansion_width must be at least 1");
        }
        Ok(())
    }
}

/// Selection score: mean value plus exploration bonus, minus the weighted
/// failure risk, plus the weighted diversity bonus. Unvisited nodes score
/// `+inf`.
#[allow(clippy::too_many_arguments)]
pub fn ucb(mean: f64, visits: u64, parent_visits: u64, c: f64, lambda: f64, risk: f64, beta: f64, diversity: f64) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    let explore = c * ((parent_visits.max(1) as f64).ln() / visits as f64).sqrt();
    mean + explore - lambda * risk + beta * diversity
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub workflow: WorkflowGraph,
    pub visits: u64,
    pub value_sum: f64,
    /// Evaluations backpropagated starting at this node.
    pub direct_evals: u64,
    pub children: Vec<usize>,
    pub parent: Option<usize>,
    pub expansion_attempts: u32,
    /// This node's own objective score, once evaluated.
    pub score: Option<f64>,
}

impl TreeNode {
    fn new(workflow: WorkflowGraph, parent: Option<usize>) -> Self {
        TreeNode {
            workflow,
            visits: 0,
            value_sum: 0.0,
            direct_evals: 0,
            children: Vec::new(),
            parent,
            expansion_attempts: 0,
            score: None,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

/// Expansion attempts a node gets before it counts as exhausted.
pub const MAX_EXPANSION_ATTEMPTS: u32 = 3;

/// Produces candidate children of a workflow.
pub trait Expander: Send + Sync {
    fn propose(&self, parent: &WorkflowGraph, count: usize, rng: &mut dyn RngCore) -> Vec<WorkflowGraph>;
}

/// Proposes random single mutations, skipping inapplicable ones and
/// candidates identical to the parent.
#[derive(Clone, Debug, Default)]
pub struct MutationExpander {
    pub space: MutationSpace,
}

impl Expander for MutationExpander {
    fn propose(&self, parent: &WorkflowGraph, count: usize, rng: &mut dyn RngCore) -> Vec<WorkflowGraph> {
        let parent_hash = parent.hash();
        let mut out: Vec<WorkflowGraph> = Vec::new();
        let mut tries = 0;
        while out.len() < count && tries < count * 10 {
            tries += 1;
            let action = MutationAction::ALL[rng.random_range(0..MutationAction::ALL.len())];
            if let Some(g) = mutate(parent, action, &self.space, rng).applied() {
                let h = g.hash();
                if h != parent_hash && out.iter().all(|o| o.hash() != h) {
                    out.push(g);
                }
            }
        }
        out
    }
}

/// Shared read-only state a population consults while stepping.
pub struct StepContext<'a> {
    pub repo: Option<&'a FailureRepository>,
    /// Snapshots of every other population.
    pub others: &'a [PopulationSnapshot],
    pub now: u64,
}

/// One population's search tree. Node indices are creation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub config: PopulationConfig,
    nodes: Vec<TreeNode>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Expansion {
    pub children: Vec<usize>,
    pub rejected_by_risk: usize,
}

impl Tree {
    pub fn new(config: PopulationConfig, root: WorkflowGraph) -> Self {
        Tree { config, nodes: vec![TreeNode::new(root, None)] }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn risk_of(&self, i: usize, ctx: &StepContext<'_>) -> f64 {
        ctx.repo.map_or(0.0, |r| r.total_risk(&self.nodes[i].workflow, ctx.now))
    }

    /// Selection score of node `i` under this population's settings.
    pub fn ucb_score(&self, i: usize, ctx: &StepContext<'_>) -> f64 {
        let n = &self.nodes[i];
        let parent_visits = n.parent.map_or(n.visits, |p| self.nodes[p].visits);
        if n.visits == 0 {
            return f64::INFINITY;
        }
        let c = &self.config;
        let risk = if c.risk_lambda > 0.0 { self.risk_of(i, ctx) } else { 0.0 };
        let div = if c.diversity_beta > 0.0 { diversity(&n.workflow, ctx.others) } else { 0.0 };
        ucb(n.mean(), n.visits, parent_visits, c.exploration_c, c.risk_lambda, risk, c.diversity_beta, div)
    }

    /// Descends from the root to a node that should be evaluated or expanded.
    pub fn select(&self, ctx: &StepContext<'_>) -> usize {
        let mut cur = 0;
        loop {
            let node = &self.nodes[cur];
            if node.visits == 0 {
                return cur;
            }
            if let Some(&child) = node.children.iter().find(|&&c| self.nodes[c].visits == 0) {
                return child;
            }
            if node.children.len() < self.config.expansion_width && node.expansion_attempts < MAX_EXPANSION_ATTEMPTS {
                return cur;
            }
            if node.children.is_empty() {
                return cur;
            }
            let mut best = node.children[0];
            let mut best_score = self.ucb_score(best, ctx);
            for &c in &node.children[1..] {
                let s = self.ucb_score(c, ctx);
                if s > best_score {
                    best = c;
                    best_score = s;
                }
            }
            cur = best;
        }
    }

    /// Adds mutated children to `leaf`, dropping candidates whose total
    /// failure risk exceeds the pre-check threshold.
    pub fn expand(&mut self, leaf: usize, expander: &dyn Expander, rng: &mut dyn RngCore, ctx: &StepContext<'_>) -> Expansion {
        self.nodes[leaf].expansion_attempts += 1;
        let room = self.config.expansion_width.saturating_sub(self.nodes[leaf].children.len()).max(1);
        let existing: Vec<String> = self.nodes[leaf].children.iter().map(|&c| self.nodes[c].workflow.hash()).collect();
        let mut out = Expansion::default();
        for cand in expander.propose(&self.nodes[leaf].workflow, room, rng) {
            if existing.contains(&cand.hash()) {
                continue;
            }
            if let Some(repo) = ctx.repo {
                if repo.total_risk(&cand, ctx.now) > self.config.risk_precheck_threshold {
                    out.rejected_by_risk += 1;
                    continue;
                }
            }
            out.children.push(self.add_child(leaf, cand));
        }
        out
    }

    pub fn add_child(&mut self, parent: usize, workflow: WorkflowGraph) -> usize {
        let i = self.nodes.len();
        self.nodes.push(TreeNode::new(workflow, Some(parent)));
        self.nodes[parent].children.push(i);
        i
    }

    /// Whether `parent` already has a child with this workflow.
    pub fn has_child(&self, parent: usize, workflow: &WorkflowGraph) -> bool {
        let h = workflow.hash();
        self.nodes[parent].children.iter().any(|&c| self.nodes[c].workflow.hash() == h)
    }

    pub fn backpropagate(&mut self, leaf: usize, value: f64) {
        debug_assert!((0.0..=1.0).contains(&value));
        self.nodes[leaf].direct_evals += 1;
        let mut cur = Some(leaf);
        while let Some(i) = cur {
            self.nodes[i].visits += 1;
            self.nodes[i].value_sum += value;
            cur = self.nodes[i].parent;
        }
    }

    pub fn set_score(&mut self, i: usize, score: f64) {
        self.nodes[i].score = Some(score);
    }

    /// Chooses what to evaluate next: a fresh leaf, a new child, or the
    /// leaf again when expansion yields nothing. Returns the node to
    /// evaluate and the expansion that happened on the way.
    pub fn plan_step(&mut self, expander: &dyn Expander, rng: &mut dyn RngCore, ctx: &StepContext<'_>) -> (usize, Expansion) {
        let leaf = self.select(ctx);
        if self.nodes[leaf].visits == 0 {
            return (leaf, Expansion::default());
        }
        let exp = self.expand(leaf, expander, rng, ctx);
        let target = exp.children.first().copied().unwrap_or(leaf);
        (target, exp)
    }

    /// Evaluated nodes ordered by own score (best first, ties by index).
    pub fn ranked(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].score.is_some()).collect();
        v.sort_by(|&a, &b| {
            let (sa, sb) = (self.nodes[a].score.unwrap_or(0.0), self.nodes[b].score.unwrap_or(0.0));
            sb.total_cmp(&sa).then(a.cmp(&b))
        });
        v
    }

    /// Best evaluated node, if any.
    pub fn best(&self) -> Option<usize> {
        self.ranked().first().copied()
    }

    /// Indented dump, one node per line: index, visits, mean, hash.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, depth)) = stack.pop() {
            let n = &self.nodes[i];
            let _ = writeln!(out, "{}{} {} {:.6} {}", "  ".repeat(depth), i, n.visits, n.mean(), n.workflow.hash());
            for &c in n.children.iter().rev() {
                stack.push((c, depth + 1));
            }
        }
        out
    }

    /// Checks that every node's visits equal its direct evaluations plus
    /// its children's visits.
    pub fn check_visit_identity(&self) -> Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            let kids: u64 = n.children.iter().map(|&c| self.nodes[c].visits).sum();
            if n.visits != n.direct_evals + kids {
                return Err(format!("node {i}: {} visits, {} direct + {kids} below", n.visits, n.direct_evals));
            }
        }
        Ok(())
    }
}

/// Random index helper for callers holding a `dyn RngCore`.
pub fn pick(rng: &mut dyn RngCore, n: usize) -> usize {
    rng.random_range(0..n)
}
