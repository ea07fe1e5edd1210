use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, RunConfig};
use super::default_seed_workflow;
use crate::objective::ObjectiveSpec;
use crate::search::{
    run, EngineConfig, LandscapeEvaluator, MutationExpander, PopulationConfig, SearchRun, SearchSetup,
};
use crate::verify::Landscape;
use crate::workflow::WorkflowGraph;

pub const VARIANT_NAMES: [&str; 5] = ["full", "no_migration", "no_failure_sharing", "no_diversity", "single_population"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoMigration,
    NoFailureSharing,
    NoDiversity,
    SinglePopulation,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Full, Variant::NoMigration, Variant::NoFailureSharing, Variant::NoDiversity, Variant::SinglePopulation];

    pub fn as_str(self) -> &'static str {
        VARIANT_NAMES[Variant::ALL.iter().position(|v| *v == self).expect("listed")]
    }

    /// Derives this variant's engine config from the full configuration.
    /// Early stopping is off so every variant spends the same budget.
    pub fn apply(self, base: &EngineConfig, balanced: &ObjectiveSpec) -> EngineConfig {
        let mut cfg = base.clone();
        cfg.early_stop_patience = None;
        match self {
            Variant::Full => {}
            Variant::NoMigration => cfg.migration = false,
            Variant::NoFailureSharing => cfg.failure_sharing = false,
            Variant::NoDiversity => {
                for p in &mut cfg.populations {
                    p.diversity_beta = 0.0;
                }
            }
            Variant::SinglePopulation => {
                let k = base.populations.len() as u64;
                let mut p = PopulationConfig::new(balanced.clone());
                p.risk_lambda = 0.0;
                p.diversity_beta = 0.0;
                cfg.populations = vec![p];
                cfg.max_iterations = base.max_iterations * k;
                cfg.migration = false;
                cfg.failure_sharing = false;
            }
        }
        cfg
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown variant '{0}'; valid variants: {list}", list = VARIANT_NAMES.join(", "))]
pub struct UnknownVariant(pub String);

impl FromStr for Variant {
    type Err = UnknownVariant;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VARIANT_NAMES
            .iter()
            .position(|n| *n == s)
            .map(|i| Variant::ALL[i])
            .ok_or_else(|| UnknownVariant(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub landscape: String,
    pub best_balanced: f64,
    pub evaluations: u64,
    pub risk_rejections: u64,
    pub migrations_accepted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub mean_best_balanced: f64,
}

/// Seeds on which the full variant matched or beat the single-population
/// baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooperativeCheck {
    pub wins: usize,
    pub seeds: usize,
    pub required: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
    pub cooperative: Option<CooperativeCheck>,
}

pub const CSV_HEADER: &str = "variant,seed,landscape,best_balanced,evaluations,risk_rejections,migrations_accepted";

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{},{}",
                r.variant.as_str(),
                r.seed,
                r.landscape,
                r.best_balanced,
                r.evaluations,
                r.risk_rejections,
                r.migrations_accepted
            );
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<20} {:>5} {:>18}\n", "variant", "runs", "mean_best_balanced");
        for s in &self.summary {
            let _ = writeln!(out, "{:<20} {:>5} {:>18.6}", s.variant.as_str(), s.runs, s.mean_best_balanced);
        }
        if let Some(c) = &self.cooperative {
            let verdict = if c.passed { "met" } else { "not met" };
            let _ = writeln!(out, "full >= single_population on {}/{} seeds (need {}): {verdict}", c.wins, c.seeds, c.required);
        }
        out
    }
}

/// Best balanced score over a run's frontier; 0 when the frontier is empty.
pub fn best_balanced(run: &SearchRun, scoring: &crate::search::Scoring, spec: &ObjectiveSpec) -> f64 {
    run.frontier.entries().iter().map(|e| scoring.score(&e.report, spec)).fold(0.0, f64::max)
}

/// Runs every configured variant on every seed of the configured landscape.
pub fn run_ablation(cfg: &RunConfig, seeds: Option<u64>, seed_workflow: Option<WorkflowGraph>) -> Result<AblationReport, ConfigError> {
    if !cfg.backend.is_synthetic() {
        return Err(ConfigError::new("ablation requires the synthetic backend"));
    }
    let landscape: Landscape = cfg.ablate.landscape.parse().map_err(|e: crate::verify::landscape::UnknownLandscape| ConfigError::new(e.to_string()))?;
    let variants: Vec<Variant> = cfg
        .ablate
        .variants
        .iter()
        .map(|v| v.parse().map_err(|e: UnknownVariant| ConfigError::new(e.to_string())))
        .collect::<Result<_, _>>()?;
    let seeds = seeds.unwrap_or(cfg.ablate.seeds);
    if seeds == 0 {
        return Err(ConfigError::new("at least one seed is required"));
    }
    let scoring = cfg.scoring();
    let balanced = cfg.balanced_spec();
    let seed_wf = seed_workflow.unwrap_or_else(default_seed_workflow);
    let evaluator = LandscapeEvaluator(landscape);
    let expander = MutationExpander::default();
    let task_id = landscape.to_string();

    let mut rows = Vec::new();
    for &variant in &variants {
        for seed in cfg.ablate.first_seed..cfg.ablate.first_seed + seeds {
            let engine = variant.apply(&cfg.engine_config(seed), &balanced);
            let setup = SearchSetup {
                task_id: &task_id,
                seed_workflow: &seed_wf,
                evaluator: &evaluator,
                expander: &expander,
                scoring: &scoring,
            };
            let r = run(&engine, &setup).map_err(|e| ConfigError::new(e.to_string()))?;
            tracing::info!(variant = variant.as_str(), seed, "ablation run done");
            let s = &r.result.statistics;
            rows.push(AblationRow {
                variant,
                seed,
                landscape: task_id.clone(),
                best_balanced: best_balanced(&r, &scoring, &balanced),
                evaluations: s.evaluations,
                risk_rejections: s.expansions_rejected_by_risk + s.migrations_rejected_by_risk,
                migrations_accepted: s.migrations_accepted,
            });
        }
    }

    let summary = variants
        .iter()
        .map(|&v| {
            let scores: Vec<f64> = rows.iter().filter(|r| r.variant == v).map(|r| r.best_balanced).collect();
            VariantSummary { variant: v, runs: scores.len(), mean_best_balanced: scores.iter().sum::<f64>() / scores.len() as f64 }
        })
        .collect();

    let cooperative = (landscape == Landscape::MultiObjective
        && variants.contains(&Variant::Full)
        && variants.contains(&Variant::SinglePopulation))
    .then(|| {
        let score = |v: Variant, seed: u64| rows.iter().find(|r| r.variant == v && r.seed == seed).map(|r| r.best_balanced);
        let wins = (cfg.ablate.first_seed..cfg.ablate.first_seed + seeds)
            .filter(|&s| score(Variant::Full, s) >= score(Variant::SinglePopulation, s))
            .count();
        let required = (seeds as usize * 7).div_ceil(10);
        CooperativeCheck { wins, seeds: seeds as usize, required, passed: wins >= required }
    });

    Ok(AblationReport { rows, summary, cooperative })
}
