//! Deterministic stand-ins for the generate-then-verify loop. Each landscape
//! maps workflow structure straight to a [`VerificationOutcome`], so search
//! dynamics can be exercised without models or EDA tools.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::{Metrics, OutcomeFailure, VerificationOutcome};
use crate::failure::FailureType;
use crate::workflow::{InvocationNode, OperatorKind, WorkflowGraph};

pub const LANDSCAPE_IDS: [&str; 5] = ["monotone", "trap", "multi_objective", "plateau", "mux_reference"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Landscape {
    /// Each distinct checking operator raises the pass rate.
    Monotone,
    /// Like `Monotone`, but a `generate -> refine` edge always fails.
    Trap,
    /// Functional score, area and timing pull in different directions.
    MultiObjective,
    /// Every workflow with a generator scores the same.
    Plateau,
    /// Always reports the 8-bit mux reference metrics.
    MuxReference,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown landscape '{0}' (expected one of: {ids})", ids = LANDSCAPE_IDS.join(", "))]
pub struct UnknownLandscape(pub String);

impl FromStr for Landscape {
    type Err = UnknownLandscape;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "monotone" => Landscape::Monotone,
            "trap" => Landscape::Trap,
            "multi_objective" => Landscape::MultiObjective,
            "plateau" => Landscape::Plateau,
            "mux_reference" => Landscape::MuxReference,
            other => return Err(UnknownLandscape(other.to_string())),
        })
    }
}

impl fmt::Display for Landscape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = match self {
            Landscape::Monotone => 0,
            Landscape::Trap => 1,
            Landscape::MultiObjective => 2,
            Landscape::Plateau => 3,
            Landscape::MuxReference => 4,
        };
        f.write_str(LANDSCAPE_IDS[i])
    }
}

/// Parameters of the monotone and trap landscapes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PassRateTable {
    /// Pass rate with no checking operators.
    pub base_v2: f64,
    /// Added per distinct checking operator kind.
    pub per_checker: f64,
    /// Added when a refine node is present and not fed directly by a generator.
    pub refine_bonus: f64,
    pub area: f64,
    pub power: f64,
    pub timing_slack: f64,
}

pub const MONOTONE: PassRateTable = PassRateTable {
    base_v2: 0.4,
    per_checker: 0.15,
    refine_bonus: 0.0,
    area: 100.0,
    power: 8.0,
    timing_slack: 0.0,
};

pub const TRAP: PassRateTable = PassRateTable {
    base_v2: 0.3,
    per_checker: 0.15,
    refine_bonus: 0.3,
    area: 100.0,
    power: 8.0,
    timing_slack: 0.0,
};

/// Constant pass rate of the plateau landscape.
pub const PLATEAU_V2: f64 = 0.5;

/// (area, power, slack) of the mux reference point.
pub const MUX_REFERENCE: (f64, f64, f64) = (68.0, 6.5, -0.08);

const CHECKERS: [OperatorKind; 4] = [
    OperatorKind::SyntaxValidator,
    OperatorKind::SimulationExecutor,
    OperatorKind::WaveformAnalyzer,
    OperatorKind::TestCaseAuthor,
];

/// Tokens a node is assumed to consume per run (prompt plus completion).
pub fn estimated_tokens(node: &InvocationNode) -> u64 {
    match node.operator {
        OperatorKind::Generate => 900,
        OperatorKind::AnalyzeProblem => 400,
        OperatorKind::Refine => 1000,
        OperatorKind::TestCaseAuthor => 600,
        OperatorKind::CircuitOptimizer => 900,
        OperatorKind::HierarchicalComposer => 1000,
        OperatorKind::Ensemble
        | OperatorKind::SyntaxValidator
        | OperatorKind::SimulationExecutor
        | OperatorKind::WaveformAnalyzer => 0,
    }
}

fn model_tier(model: &str) -> f64 {
    match model {
        "coder-small" => 0.0,
        "coder-medium" => 0.5,
        "reasoner-large" => 1.0,
        _ => 0.5,
    }
}

/// Looks up `task_id` as a landscape name and scores `workflow` on it.
pub fn synthetic_landscape(task_id: &str, workflow: &WorkflowGraph) -> Result<VerificationOutcome, UnknownLandscape> {
    Ok(task_id.parse::<Landscape>()?.evaluate(workflow))
}

struct Features {
    generators: usize,
    checkers: usize,
    analyze: bool,
    refine: bool,
    trap_edge: bool,
    ensemble_fan_in: bool,
    optimizers: usize,
    composer: bool,
    tier: f64,
    depth: usize,
}

impl Features {
    fn of(w: &WorkflowGraph) -> Self {
        let kinds: BTreeSet<OperatorKind> = w.nodes().iter().map(|n| n.operator).collect();
        let ensemble_fan_in = w.nodes().iter().any(|n| {
            n.operator == OperatorKind::Ensemble
                && w.predecessors(&n.id)
                    .filter(|p| w.node(p).is_some_and(|p| p.operator == OperatorKind::Generate))
                    .count()
                    >= 2
        });
        let coders: Vec<f64> = w
            .nodes()
            .iter()
            .filter(|n| n.operator.produces_code() && n.operator.is_model_invoking())
            .map(|n| model_tier(&n.model))
            .collect();
        Features {
            generators: w.count_operator(OperatorKind::Generate),
            checkers: CHECKERS.iter().filter(|k| kinds.contains(k)).count(),
            analyze: kinds.contains(&OperatorKind::AnalyzeProblem),
            refine: kinds.contains(&OperatorKind::Refine),
            trap_edge: w
                .operator_edges()
                .any(|e| e == (OperatorKind::Generate, OperatorKind::Refine)),
            ensemble_fan_in,
            optimizers: w.count_operator(OperatorKind::CircuitOptimizer).min(2),
            composer: kinds.contains(&OperatorKind::HierarchicalComposer),
            tier: if coders.is_empty() { 0.0 } else { coders.iter().sum::<f64>() / coders.len() as f64 },
            depth: w.depth(),
        }
    }
}

/// Rounds a pass rate onto a 20-check testbench so V2 stays a ratio of
/// whole tests.
fn quantize(v2: f64) -> (f64, usize) {
    let passed = (v2.clamp(0.0, 1.0) * 20.0 + 1e-9).floor() as usize;
    (passed as f64 / 20.0, passed)
}

impl Landscape {
    pub fn evaluate(self, w: &WorkflowGraph) -> VerificationOutcome {
        let tokens: u64 = w.nodes().iter().map(estimated_tokens).sum();
        let f = Features::of(w);
        if f.generators == 0 {
            let mut o = VerificationOutcome::syntax_failure("workflow has no generate node");
            o.tokens_consumed = tokens;
            return o;
        }
        let (v2, metrics, boundary_ok) = match self {
            Landscape::Monotone | Landscape::Trap => {
                let t = if self == Landscape::Monotone { MONOTONE } else { TRAP };
                if self == Landscape::Trap && f.trap_edge {
                    (0.0, Metrics { area: t.area, power: Some(t.power), timing_slack: Some(t.timing_slack) }, false)
                } else {
                    let bonus = if f.refine { t.refine_bonus } else { 0.0 };
                    let v2 = t.base_v2 + t.per_checker * f.checkers as f64 + bonus;
                    (v2, Metrics { area: t.area, power: Some(t.power), timing_slack: Some(t.timing_slack) }, f.analyze)
                }
            }
            Landscape::MultiObjective => {
                let b = |x: bool| if x { 1.0 } else { 0.0 };
                let opt = f.optimizers as f64;
                let v2 = 0.30 + 0.10 * f.checkers as f64 + 0.08 * b(f.analyze) + 0.08 * b(f.ensemble_fan_in)
                    + 0.05 * f.tier
                    + 0.04 * b(f.refine)
                    - 0.06 * opt;
                let area = 120.0
                    * (1.0 + 0.2 * f.checkers as f64 + 0.1 * (f.generators as f64 - 1.0))
                    * 0.65f64.powf(opt)
                    * if f.composer { 0.9 } else { 1.0 };
                let slack = -0.6 + 0.3 * b(f.composer) + 0.15 * opt - 0.04 * (f.depth as f64 - 1.0);
                (v2, Metrics { area, power: Some(0.09 * area), timing_slack: Some(slack) }, false)
            }
            Landscape::Plateau => (PLATEAU_V2, Metrics { area: 100.0, power: Some(8.0), timing_slack: Some(0.0) }, false),
            Landscape::MuxReference => {
                let (area, power, slack) = MUX_REFERENCE;
                (1.0, Metrics { area, power: Some(power), timing_slack: Some(slack) }, true)
            }
        };
        let (v2, passed) = quantize(v2);
        let v3 = u8::from(v2 == 1.0 && boundary_ok);
        let failure = if v2 < 1.0 {
            let detail = if self == Landscape::Trap && f.trap_edge {
                "generate feeds refine directly".to_string()
            } else {
                format!("{passed} of 20 checks passed")
            };
            Some(OutcomeFailure { failure_type: FailureType::SimulationMismatch, detail })
        } else if v3 == 0 {
            Some(OutcomeFailure {
                failure_type: FailureType::BoundaryFailure,
                detail: "boundary checks failed".into(),
            })
        } else {
            None
        };
        VerificationOutcome {
            v1: 1,
            v2,
            v3,
            metrics: Some(metrics),
            tokens_consumed: tokens,
            failure,
            tests_passed: passed,
            tests_total: 20,
            missing_tool: None,
        }
    }
}
