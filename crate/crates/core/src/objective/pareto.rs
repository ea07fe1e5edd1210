use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::EvaluationReport;
use crate::workflow::WorkflowGraph;

/// Maximization vector: (functional, -area, -power, slack, -token cost).
pub fn objective_vector(r: &EvaluationReport) -> [f64; 5] {
    [r.functional_score, -r.area, -r.power, r.timing_slack, -r.token_cost]
}

/// `a` is at least as good everywhere and strictly better somewhere.
pub fn dominates(a: &[f64; 5], b: &[f64; 5]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strictly = true;
        }
    }
    strictly
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierEntry {
    pub workflow: WorkflowGraph,
    pub report: EvaluationReport,
}

impl FrontierEntry {
    fn vector(&self) -> [f64; 5] {
        objective_vector(&self.report)
    }
}

/// Mutually non-dominated set of evaluated workflows, kept in a canonical
/// order (best objective vector first, then by workflow hash).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFrontier {
    entries: Vec<FrontierEntry>,
}

impl ParetoFrontier {
    pub fn new() -> Self {
        ParetoFrontier::default()
    }

    pub fn entries(&self) -> &[FrontierEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts `candidate` unless some member dominates it, evicting every
    /// member it dominates. Returns whether the candidate was kept.
    pub fn insert(&mut self, candidate: FrontierEntry) -> bool {
        let v = candidate.vector();
        if self.entries.iter().any(|e| dominates(&e.vector(), &v)) {
            return false;
        }
        if self.entries.iter().any(|e| e == &candidate) {
            return false;
        }
        self.entries.retain(|e| !dominates(&v, &e.vector()));
        let key = sort_key(&candidate);
        let pos = self
            .entries
            .binary_search_by(|e| compare_keys(&sort_key(e), &key))
            .unwrap_or_else(|p| p);
        self.entries.insert(pos, candidate);
        true
    }
}

fn sort_key(e: &FrontierEntry) -> ([f64; 5], String) {
    (e.vector(), e.workflow.hash())
}

fn compare_keys(a: &([f64; 5], String), b: &([f64; 5], String)) -> Ordering {
    for (x, y) in a.0.iter().zip(&b.0) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.1.cmp(&b.1)
}

/// Functional form of [`ParetoFrontier::insert`].
pub fn pareto_update(frontier: &ParetoFrontier, candidate: FrontierEntry) -> ParetoFrontier {
    let mut next = frontier.clone();
    next.insert(candidate);
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::{InvocationNode, OperatorKind};
    use proptest::prelude::*;

    fn entry(tag: usize, f: f64, area: f64) -> FrontierEntry {
        FrontierEntry {
            workflow: WorkflowGraph::single(InvocationNode::of_kind(
                format!("n{tag}"),
                OperatorKind::Generate,
                "m",
            )),
            report: EvaluationReport {
                functional_score: f,
                area,
                power: 5.0,
                timing_slack: 0.0,
                token_cost: 1.0,
                verification_level_reached: 1,
            },
        }
    }

    #[test]
    fn empty_frontier_accepts_anything() {
        let f = pareto_update(&ParetoFrontier::new(), entry(0, 0.1, 500.0));
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn dominating_candidate_replaces_member() {
        let f = pareto_update(&ParetoFrontier::new(), entry(0, 0.9, 100.0));
        let f = pareto_update(&f, entry(1, 0.9, 90.0));
        assert_eq!(f.len(), 1);
        assert_eq!(f.entries()[0].report.area, 90.0);
    }

    #[test]
    fn trade_off_keeps_both() {
        let f = pareto_update(&ParetoFrontier::new(), entry(0, 0.9, 100.0));
        let f = pareto_update(&f, entry(1, 0.8, 90.0));
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn identical_entry_is_not_duplicated() {
        let mut f = ParetoFrontier::new();
        assert!(f.insert(entry(0, 0.5, 50.0)));
        assert!(!f.insert(entry(0, 0.5, 50.0)));
        // same scores, different workflow: both kept
        assert!(f.insert(entry(1, 0.5, 50.0)));
        assert_eq!(f.len(), 2);
    }

    proptest! {
        #[test]
        fn insertion_order_does_not_matter(
            points in proptest::collection::vec((0u8..4, 0u8..4), 1..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let cands: Vec<_> = points.iter().enumerate()
                .map(|(i, (f, a))| entry(i, *f as f64 / 4.0, *a as f64 * 10.0))
                .collect();
            let mut forward = ParetoFrontier::new();
            for c in &cands { forward.insert(c.clone()); }
            let mut shuffled = cands.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut other = ParetoFrontier::new();
            for c in shuffled { other.insert(c); }
            prop_assert_eq!(&forward, &other);
            for a in forward.entries() {
                for b in forward.entries() {
                    prop_assert!(!dominates(&a.vector(), &b.vector()));
                }
            }
        }
    }
}
