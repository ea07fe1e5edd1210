use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::eval::{EvalError, Evaluation, Scoring, WorkflowEvaluator};
use super::mcts::{Expander, PopulationConfig, StepContext, Tree};
use crate::failure::{FailureRepository, FailureType, DEFAULT_DECAY_ALPHA};
use crate::objective::{EvaluationReport, FrontierEntry, ObjectiveKind, ObjectiveSpec, ParetoFrontier};
use crate::workflow::{compose, extract_fragments, similarity, WorkflowGraph};

/// Elite workflows a population exposes to the others.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationSnapshot {
    pub population_index: usize,
    /// Sorted by score, best first.
    pub best_workflows: Vec<(WorkflowGraph, f64)>,
    pub published_at: u64,
}

/// Mean over the other populations of the distance to their closest
/// snapshot member. An empty snapshot counts as maximally distant; no
/// other populations gives 0.
pub fn diversity(w: &WorkflowGraph, others: &[PopulationSnapshot]) -> f64 {
    if others.is_empty() {
        return 0.0;
    }
    let total: f64 = others
        .iter()
        .map(|s| s.best_workflows.iter().map(|(o, _)| 1.0 - similarity(w, o)).fold(1.0, f64::min))
        .sum();
    total / others.len() as f64
}

/// Relative improvement of `composed` over `base`. A zero base gives
/// `+inf` when the composed score is positive and 0 otherwise.
pub fn fragment_fitness(base: f64, composed: f64) -> f64 {
    if base == 0.0 {
        if composed > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        (composed - base) / base
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub populations: Vec<PopulationConfig>,
    pub migration_interval: u64,
    pub migration_threshold: f64,
    pub max_iterations: u64,
    /// `None` disables early stopping.
    pub early_stop_patience: Option<u64>,
    pub rng_seed: u64,
    pub snapshot_size: usize,
    pub fragments_per_migration: usize,
    pub migration: bool,
    pub failure_sharing: bool,
    pub decay_alpha: f64,
}

impl EngineConfig {
    pub fn new(populations: Vec<PopulationConfig>, rng_seed: u64) -> Self {
        EngineConfig {
            populations,
            migration_interval: 3,
            migration_threshold: 0.05,
            max_iterations: 20,
            early_stop_patience: Some(5),
            rng_seed,
            snapshot_size: 3,
            fragments_per_migration: 2,
            migration: true,
            failure_sharing: true,
            decay_alpha: DEFAULT_DECAY_ALPHA,
        }
    }

    /// The four standard populations: functionality, area, timing, balanced.
    pub fn default_populations() -> Vec<PopulationConfig> {
        [ObjectiveKind::FunctionalityFirst, ObjectiveKind::AreaOpt, ObjectiveKind::TimingOpt, ObjectiveKind::Balanced]
            .into_iter()
            .map(|k| PopulationConfig::new(ObjectiveSpec::new(k)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.populations.is_empty() {
            return bad("at least one population is required".into());
        }
        for (i, p) in self.populations.iter().enumerate() {
            p.validate().map_err(|e| EngineError::Config(format!("population {i}: {e}")))?;
        }
        if self.migration_interval == 0 || self.max_iterations == 0 {
            return bad("migration_interval and max_iterations must be at least 1".into());
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be at least 1".into());
        }
        if !self.migration_threshold.is_finite() {
            return bad("migration_threshold must be finite".into());
        }
        if self.decay_alpha.is_nan() || self.decay_alpha <= 0.0 {
            return bad("decay_alpha must be positive".into());
        }
        if self.snapshot_size == 0 {
            return bad("snapshot_size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("engine config: {0}")]
    Config(String),
    #[error("seed workflow is invalid")]
    InvalidSeed,
}

mod phi_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() => Repr::Text(if *x > 0.0 { "inf" } else { "-inf" }.into()).serialize(s),
            Some(x) => Repr::Num(*x).serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Repr>::deserialize(d)? {
            None => None,
            Some(Repr::Num(x)) => Some(x),
            Some(Repr::Text(t)) if t == "inf" => Some(f64::INFINITY),
            Some(Repr::Text(t)) if t == "-inf" => Some(f64::NEG_INFINITY),
            Some(Repr::Text(t)) => return Err(serde::de::Error::custom(format!("bad phi {t}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub iteration: u64,
    pub source: usize,
    pub target: usize,
    pub fragment_nodes: usize,
    #[serde(with = "phi_serde")]
    pub phi: Option<f64>,
    pub accepted: bool,
    /// Why nothing was evaluated, for skipped attempts.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skipped: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSource {
    Search,
    Migration,
}

/// One evaluation performed during a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalLogEntry {
    pub iteration: u64,
    pub population: usize,
    pub source: EvalSource,
    pub workflow: WorkflowGraph,
    pub failure: Option<FailureType>,
    pub score: Option<f64>,
    pub tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub functional: f64,
    pub area: f64,
    pub power: f64,
    pub timing_slack: f64,
    pub token_cost: f64,
}

impl From<&EvaluationReport> for Scores {
    fn from(r: &EvaluationReport) -> Self {
        Scores {
            functional: r.functional_score,
            area: r.area,
            power: r.power,
            timing_slack: r.timing_slack,
            token_cost: r.token_cost,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierItem {
    pub workflow: WorkflowGraph,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationBest {
    pub population: usize,
    pub objective: ObjectiveKind,
    pub workflow: WorkflowGraph,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    EarlyStop,
    BudgetExhausted,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub iterations_run: u64,
    /// Search-step evaluations; migration trials are counted separately.
    pub evaluations: u64,
    pub migration_evaluations: u64,
    pub expansions_rejected_by_risk: u64,
    pub migrations_attempted: u64,
    pub migrations_accepted: u64,
    pub migrations_rejected_by_risk: u64,
    pub infrastructure_errors: u64,
    pub tokens_consumed: u64,
    pub stop_reason: Option<StopReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub task_id: String,
    pub seed: u64,
    pub pareto_frontier: Vec<FrontierItem>,
    pub best_per_population: Vec<PopulationBest>,
    pub statistics: Statistics,
}

/// Everything a run produces: the result plus debugging artifacts.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchRun {
    pub result: SearchResult,
    pub frontier: ParetoFrontier,
    pub trees: Vec<Tree>,
    pub migrations: Vec<MigrationRecord>,
    pub eval_log: Vec<EvalLogEntry>,
    pub repository: Option<FailureRepository>,
}

impl SearchRun {
    pub fn tree_dumps(&self) -> Vec<String> {
        self.trees.iter().map(Tree::dump).collect()
    }
}

/// Collaborators a run needs besides its config.
pub struct SearchSetup<'a> {
    pub task_id: &'a str,
    pub seed_workflow: &'a WorkflowGraph,
    pub evaluator: &'a dyn WorkflowEvaluator,
    pub expander: &'a dyn Expander,
    pub scoring: &'a Scoring,
}

struct StepOutcome {
    node: usize,
    rejected: usize,
    result: Result<Evaluation, EvalError>,
}

struct RunState<'a> {
    cfg: &'a EngineConfig,
    setup: &'a SearchSetup<'a>,
    trees: Vec<Tree>,
    repo: Option<FailureRepository>,
    snapshots: Vec<PopulationSnapshot>,
    frontier: ParetoFrontier,
    stats: Statistics,
    migrations: Vec<MigrationRecord>,
    eval_log: Vec<EvalLogEntry>,
    budget_hit: bool,
}

pub fn run(cfg: &EngineConfig, setup: &SearchSetup<'_>) -> Result<SearchRun, EngineError> {
    cfg.validate()?;
    if !setup.seed_workflow.is_valid() {
        return Err(EngineError::InvalidSeed);
    }
    let k = cfg.populations.len();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut rngs: Vec<ChaCha8Rng> = (0..k).map(|_| ChaCha8Rng::seed_from_u64(master.next_u64())).collect();
    let mut migration_rng = ChaCha8Rng::seed_from_u64(master.next_u64());

    let mut st = RunState {
        cfg,
        setup,
        trees: cfg.populations.iter().map(|p| Tree::new(p.clone(), setup.seed_workflow.clone())).collect(),
        repo: cfg.failure_sharing.then(|| FailureRepository::new(cfg.decay_alpha)),
        snapshots: (0..k).map(|i| PopulationSnapshot { population_index: i, ..Default::default() }).collect(),
        frontier: ParetoFrontier::new(),
        stats: Statistics::default(),
        migrations: Vec::new(),
        eval_log: Vec::new(),
        budget_hit: false,
    };

    let stop_spec = ObjectiveSpec::new(ObjectiveKind::Balanced);
    let mut best_balanced = f64::NEG_INFINITY;
    let mut last_improvement = 0;
    let mut stop = StopReason::MaxIterations;

    for it in 1..=cfg.max_iterations {
        let outcomes = st.parallel_step(&mut rngs, it);
        st.barrier(outcomes, it);
        if !st.budget_hit && it % cfg.migration_interval == 0 {
            st.publish_snapshots(it);
            if cfg.migration && k > 1 {
                st.migrate(&mut migration_rng, it);
            }
        }
        st.stats.iterations_run = it;
        tracing::debug!(iteration = it, frontier = st.frontier.len(), "iteration done");

        if st.budget_hit {
            stop = StopReason::BudgetExhausted;
            break;
        }
        let current = st
            .frontier
            .entries()
            .iter()
            .map(|e| setup.scoring.score(&e.report, &stop_spec))
            .fold(f64::NEG_INFINITY, f64::max);
        if current > best_balanced {
            best_balanced = current;
            last_improvement = it;
        }
        if let Some(p) = cfg.early_stop_patience {
            if it - last_improvement >= p {
                stop = StopReason::EarlyStop;
                break;
            }
        }
    }
    st.stats.stop_reason = Some(stop);
    Ok(st.finish())
}

impl RunState<'_> {
    fn parallel_step(&mut self, rngs: &mut [ChaCha8Rng], now: u64) -> Vec<StepOutcome> {
        let repo = self.repo.as_ref();
        let snapshots = &self.snapshots;
        let setup = self.setup;
        self.trees
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .enumerate()
            .map(|(i, (tree, rng))| {
                let others: Vec<PopulationSnapshot> =
                    snapshots.iter().filter(|s| s.population_index != i).cloned().collect();
                let ctx = StepContext { repo, others: &others, now };
                let (node, exp) = tree.plan_step(setup.expander, rng, &ctx);
                let result = setup.evaluator.evaluate(&tree.node(node).workflow);
                StepOutcome { node, rejected: exp.rejected_by_risk, result }
            })
            .collect()
    }

    fn barrier(&mut self, outcomes: Vec<StepOutcome>, now: u64) {
        for (pop, out) in outcomes.into_iter().enumerate() {
            self.stats.evaluations += 1;
            self.stats.expansions_rejected_by_risk += out.rejected as u64;
            let workflow = self.trees[pop].node(out.node).workflow.clone();
            match out.result {
                Ok(eval) => {
                    let score = self.absorb(pop, &workflow, &eval, now, EvalSource::Search);
                    self.trees[pop].set_score(out.node, score);
                    self.trees[pop].backpropagate(out.node, score);
                }
                Err(EvalError::Budget(msg)) => {
                    tracing::warn!(population = pop, %msg, "token budget exhausted");
                    self.budget_hit = true;
                }
                Err(EvalError::Infrastructure(msg)) => {
                    tracing::warn!(population = pop, %msg, "evaluation aborted");
                    self.stats.infrastructure_errors += 1;
                    if let Some(repo) = self.repo.as_mut() {
                        let sev = self.setup.scoring.severities.severity(FailureType::ExecutionError, 0.0);
                        if let Ok(r) = crate::failure::FailureRecord::new(workflow.clone(), FailureType::ExecutionError, sev, now) {
                            repo.record_failure(r);
                        }
                    }
                    self.eval_log.push(EvalLogEntry {
                        iteration: now,
                        population: pop,
                        source: EvalSource::Search,
                        workflow,
                        failure: Some(FailureType::ExecutionError),
                        score: None,
                        tokens: 0,
                    });
                }
            }
        }
    }

    /// Records failure, frontier and log effects of an evaluation and
    /// returns its score under `pop`'s objective.
    fn absorb(&mut self, pop: usize, workflow: &WorkflowGraph, eval: &Evaluation, now: u64, source: EvalSource) -> f64 {
        let scoring = self.setup.scoring;
        let report = scoring.report(eval);
        let score = scoring.score(&report, &self.cfg.populations[pop].objective);
        let tokens: u64 = eval.tokens_by_model.values().sum();
        self.stats.tokens_consumed += tokens;
        if let (Some(repo), Some(rec)) = (self.repo.as_mut(), scoring.failure(workflow, &eval.outcome, now)) {
            repo.record_failure(rec);
        }
        if report.verification_level_reached >= 1 {
            self.frontier.insert(FrontierEntry { workflow: workflow.clone(), report });
        }
        self.eval_log.push(EvalLogEntry {
            iteration: now,
            population: pop,
            source,
            workflow: workflow.clone(),
            failure: eval.outcome.failure.as_ref().map(|f| f.failure_type),
            score: Some(score),
            tokens,
        });
        score
    }

    fn publish_snapshots(&mut self, now: u64) {
        for (i, tree) in self.trees.iter().enumerate() {
            let best_workflows = tree
                .ranked()
                .into_iter()
                .take(self.cfg.snapshot_size)
                .map(|n| (tree.node(n).workflow.clone(), tree.node(n).score.unwrap_or(0.0)))
                .collect();
            self.snapshots[i] = PopulationSnapshot { population_index: i, best_workflows, published_at: now };
        }
    }

    fn migrate(&mut self, rng: &mut ChaCha8Rng, now: u64) {
        let k = self.trees.len();
        for source in 0..k {
            for target in 0..k {
                if source == target || self.budget_hit {
                    continue;
                }
                let (Some(src_best), Some(dst_best)) = (self.trees[source].best(), self.trees[target].best()) else {
                    continue;
                };
                let src_wf = self.trees[source].node(src_best).workflow.clone();
                let base_wf = self.trees[target].node(dst_best).workflow.clone();
                let base_score = self.trees[target].node(dst_best).score.unwrap_or(0.0);
                for frag in extract_fragments(&src_wf, self.cfg.fragments_per_migration, rng) {
                    self.stats.migrations_attempted += 1;
                    let mut rec = MigrationRecord {
                        iteration: now,
                        source,
                        target,
                        fragment_nodes: frag.subgraph.len(),
                        phi: None,
                        accepted: false,
                        skipped: None,
                    };
                    match compose(&base_wf, &frag.anchor(&base_wf)) {
                        Err(e) => rec.skipped = Some(e.to_string()),
                        Ok(composed) if composed.hash() == base_wf.hash() => {
                            rec.phi = Some(0.0);
                        }
                        Ok(composed) if self.too_risky(target, &composed, now) => {
                            self.stats.migrations_rejected_by_risk += 1;
                            rec.skipped = Some("failure risk above threshold".into());
                        }
                        Ok(composed) => match self.setup.evaluator.evaluate(&composed) {
                            Err(EvalError::Budget(msg)) => {
                                rec.skipped = Some(msg);
                                self.budget_hit = true;
                            }
                            Err(EvalError::Infrastructure(msg)) => {
                                self.stats.migration_evaluations += 1;
                                self.stats.infrastructure_errors += 1;
                                rec.skipped = Some(msg);
                            }
                            Ok(eval) => {
                                self.stats.migration_evaluations += 1;
                                let s = self.absorb(target, &composed, &eval, now, EvalSource::Migration);
                                let phi = fragment_fitness(base_score, s);
                                rec.phi = Some(phi);
                                if phi > self.cfg.migration_threshold && !self.trees[target].has_child(0, &composed) {
                                    self.trees[target].add_child(0, composed);
                                    rec.accepted = true;
                                    self.stats.migrations_accepted += 1;
                                }
                            }
                        },
                    }
                    tracing::debug!(source, target, phi = ?rec.phi, accepted = rec.accepted, "migration attempt");
                    self.migrations.push(rec);
                }
            }
        }
    }

    /// Same pre-check expansion applies, for composed migration candidates.
    fn too_risky(&self, target: usize, w: &WorkflowGraph, now: u64) -> bool {
        self.repo
            .as_ref()
            .is_some_and(|r| r.total_risk(w, now) > self.cfg.populations[target].risk_precheck_threshold)
    }

    fn finish(self) -> SearchRun {
        let best_per_population = self
            .trees
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                let b = t.best()?;
                Some(PopulationBest {
                    population: i,
                    objective: t.config.objective.kind,
                    workflow: t.node(b).workflow.clone(),
                    score: t.node(b).score.unwrap_or(0.0),
                })
            })
            .collect();
        let pareto_frontier = self
            .frontier
            .entries()
            .iter()
            .map(|e| FrontierItem { workflow: e.workflow.clone(), scores: Scores::from(&e.report) })
            .collect();
        SearchRun {
            result: SearchResult {
                task_id: self.setup.task_id.to_string(),
                seed: self.cfg.rng_seed,
                pareto_frontier,
                best_per_population,
                statistics: self.stats,
            },
            frontier: self.frontier,
            trees: self.trees,
            migrations: self.migrations,
            eval_log: self.eval_log,
            repository: self.repo,
        }
    }
}
