//! Per-population objectives, the modularity metric and the Pareto
//! frontier over evaluated workflows.

mod pareto;

pub use pareto::{dominates, objective_vector, pareto_update, FrontierEntry, ParetoFrontier};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Scores of one evaluated workflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// V2 pass rate, or V3 when boundary verification passed.
    pub functional_score: f64,
    /// μm²
    pub area: f64,
    /// μW
    pub power: f64,
    /// ns; negative means the constraint is violated
    pub timing_slack: f64,
    pub token_cost: f64,
    pub verification_level_reached: u8,
}

impl EvaluationReport {
    /// Report of a workflow whose output never passed the syntax gate.
    pub fn failed(token_cost: f64) -> Self {
        EvaluationReport {
            functional_score: 0.0,
            area: 0.0,
            power: 0.0,
            timing_slack: 0.0,
            token_cost,
            verification_level_reached: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |m: &str| Err(ObjectiveError::Domain(m.to_string()));
        if !(0.0..=1.0).contains(&self.functional_score) {
            return bad("functional_score outside [0, 1]");
        }
        if self.verification_level_reached > 3 {
            return bad("verification level above 3");
        }
        if self.verification_level_reached == 0 && self.functional_score != 0.0 {
            return bad("level 0 requires functional_score 0");
        }
        if self.area < 0.0 || self.power < 0.0 || self.token_cost < 0.0 {
            return bad("negative area, power or token cost");
        }
        if !self.timing_slack.is_finite() {
            return bad("non-finite timing slack");
        }
        Ok(())
    }

    pub fn passed_syntax(&self) -> bool {
        self.verification_level_reached >= 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    FunctionalityFirst,
    AreaOpt,
    TimingOpt,
    Balanced,
    TokenCost,
}

impl ObjectiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::FunctionalityFirst => "functionality_first",
            ObjectiveKind::AreaOpt => "area_opt",
            ObjectiveKind::TimingOpt => "timing_opt",
            ObjectiveKind::Balanced => "balanced",
            ObjectiveKind::TokenCost => "token_cost",
        }
    }
}

/// Default balanced weights over (functional, area, timing, token cost).
pub const DEFAULT_BALANCED_WEIGHTS: [f64; 4] = [0.5, 0.2, 0.2, 0.1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Only read by `balanced`: three weights over (functional, area,
    /// timing) or four with token cost appended.
    #[serde(default)]
    pub weights: Vec<f64>,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        let weights = if kind == ObjectiveKind::Balanced {
            DEFAULT_BALANCED_WEIGHTS.to_vec()
        } else {
            Vec::new()
        };
        ObjectiveSpec { kind, weights }
    }

    pub fn balanced(weights: Vec<f64>) -> Result<Self, ObjectiveError> {
        let spec = ObjectiveSpec { kind: ObjectiveKind::Balanced, weights };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.kind != ObjectiveKind::Balanced {
            return Ok(());
        }
        if !(3..=4).contains(&self.weights.len()) {
            return Err(ObjectiveError::Config(format!(
                "balanced objective needs 3 or 4 weights, got {}",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ObjectiveError::Config("weights must be non-negative".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ObjectiveError::Config(format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Reference anchors that map raw hardware metrics into higher-is-better
/// scores in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalizer {
    pub area_ref: f64,
    pub power_ref: f64,
    /// ns; scale of the exponential penalty on negative slack
    pub slack_tau: f64,
    pub token_ref: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            area_ref: 100.0,
            power_ref: 10.0,
            slack_tau: 1.0,
            token_ref: 2.0,
        }
    }
}

impl Normalizer {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        for (name, v) in [
            ("area_ref", self.area_ref),
            ("power_ref", self.power_ref),
            ("slack_tau", self.slack_tau),
            ("token_ref", self.token_ref),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ObjectiveError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn area(&self, area: f64) -> f64 {
        self.area_ref / (self.area_ref + area.max(0.0))
    }

    pub fn power(&self, power: f64) -> f64 {
        self.power_ref / (self.power_ref + power.max(0.0))
    }

    pub fn timing(&self, slack: f64) -> f64 {
        if slack >= 0.0 {
            1.0
        } else {
            (slack / self.slack_tau).exp()
        }
    }

    pub fn token_cost(&self, cost: f64) -> f64 {
        self.token_ref / (self.token_ref + cost.max(0.0))
    }
}

/// Scores `report` under `spec`; always in [0, 1].
pub fn score(report: &EvaluationReport, spec: &ObjectiveSpec, norm: &Normalizer) -> Result<f64, ObjectiveError> {
    spec.validate()?;
    if !report.passed_syntax() {
        return Ok(0.0);
    }
    let value = match spec.kind {
        ObjectiveKind::FunctionalityFirst => report.functional_score,
        ObjectiveKind::AreaOpt => norm.area(report.area),
        ObjectiveKind::TimingOpt => norm.timing(report.timing_slack),
        ObjectiveKind::TokenCost => norm.token_cost(report.token_cost),
        ObjectiveKind::Balanced => {
            let g = [
                report.functional_score,
                norm.area(report.area),
                norm.timing(report.timing_slack),
                norm.token_cost(report.token_cost),
            ];
            spec.weights.iter().zip(g).map(|(w, g)| w * g).sum()
        }
    };
    Ok(value.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModularityWeights {
    pub psi1: f64,
    pub psi2: f64,
    pub psi3: f64,
    pub d_max: u32,
}

impl Default for ModularityWeights {
    fn default() -> Self {
        ModularityWeights { psi1: 0.4, psi2: 0.4, psi3: 0.2, d_max: 4 }
    }
}

/// Structural counts of a synthesized design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub module_count: u32,
    pub total_logic_count: u32,
    pub reused_module_count: u32,
    pub hierarchy_depth: u32,
}

/// Rewards modularization and reuse, penalizing hierarchy deeper than
/// `d_max`.
pub fn modularity(design: &DesignSummary, w: &ModularityWeights) -> Result<f64, ObjectiveError> {
    let d = design;
    if d.module_count < 1 || d.total_logic_count < d.module_count {
        return Err(ObjectiveError::Domain("need total_logic >= modules >= 1".into()));
    }
    if d.reused_module_count > d.module_count {
        return Err(ObjectiveError::Domain("reused modules exceed module count".into()));
    }
    if d.hierarchy_depth < 1 {
        return Err(ObjectiveError::Domain("hierarchy depth must be at least 1".into()));
    }
    if w.psi1 < 0.0 || w.psi2 < 0.0 || w.psi3 < 0.0 || w.d_max < 1 {
        return Err(ObjectiveError::Domain("weights must be non-negative and d_max >= 1".into()));
    }
    let ratio = d.module_count as f64 / d.total_logic_count as f64;
    let reuse = d.reused_module_count as f64 / d.module_count as f64;
    let excess = d.hierarchy_depth.saturating_sub(w.d_max) as f64;
    Ok(w.psi1 * ratio + w.psi2 * reuse - w.psi3 * excess)
}
