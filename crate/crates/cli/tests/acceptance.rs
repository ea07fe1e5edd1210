//! Acceptance suite. Runs every criterion, prints one verdict line each and
//! exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use flowsmith::executor::{execute, ExecError, MockBackend};
use flowsmith::failure::{FailureRecord, FailureRepository, FailureType};
use flowsmith::objective::{
    modularity, DesignSummary, EvaluationReport, FrontierEntry, ModularityWeights, ObjectiveKind, ObjectiveSpec,
    ParetoFrontier,
};
use flowsmith::runner::ablate::{run_ablation, Variant};
use flowsmith::runner::RunConfig;
use flowsmith::runner::{default_seed_workflow, tool_available};
use flowsmith::search::{
    diversity, fragment_fitness, run, ucb, EngineConfig, EvalError, EvalLogEntry, EvalSource, Evaluation, Expander,
    LandscapeEvaluator, MutationExpander, PipelineEvaluator, PopulationConfig, PopulationSnapshot, Scoring,
    SearchRun, SearchSetup, StopReason, WorkflowEvaluator,
};
use flowsmith::verify::landscape::estimated_tokens;
use flowsmith::verify::{
    verify, BuiltinBackend, ExternalBackend, ExternalConfig, Landscape, Metrics, OutcomeFailure, TaskDescriptor,
    VerificationOutcome,
};
use flowsmith::workflow::{mutate, InvocationNode, MutationAction, MutationSpace, OperatorKind, WorkflowGraph};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

const REL_TOL: f64 = 1e-9;
const ORACLE_CASES: usize = 1000;
const PARETO_TRIALS: usize = 100;
const SEEDS: u64 = 10;
const TRAP_THETA: f64 = 0.7;
const TRAP_ALPHA: f64 = 0.05;
const TRAP_RATIO: f64 = 0.2;
const UCT_SHARE: f64 = 0.8;
const UCT_ITERATIONS: u64 = 200;
const GOLDEN_TOL: f64 = 0.2;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict { passed, detail: detail.into() }
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= REL_TOL * a.abs().max(b.abs())
}

// ---------------------------------------------------------------- oracles

type Key = (String, String, String);

fn keys(w: &WorkflowGraph) -> Vec<Key> {
    w.nodes()
        .iter()
        .map(|n| (format!("{:?}", n.operator), n.model.clone(), format!("{:?}", n.format)))
        .collect()
}

fn jaccard_oracle(a: &WorkflowGraph, b: &WorkflowGraph) -> f64 {
    let (ka, kb) = (keys(a), keys(b));
    if ka.is_empty() && kb.is_empty() {
        return 1.0;
    }
    let mut distinct: Vec<&Key> = ka.iter().chain(&kb).collect();
    distinct.sort();
    distinct.dedup();
    let count = |v: &[Key], k: &Key| v.iter().filter(|x| *x == k).count();
    let (mut inter, mut union) = (0, 0);
    for k in distinct {
        let (x, y) = (count(&ka, k), count(&kb, k));
        inter += x.min(y);
        union += x.max(y);
    }
    inter as f64 / union as f64
}

fn risk_oracle(records: &[FailureRecord], w: &WorkflowGraph, kind: FailureType, alpha: f64, now: u64) -> f64 {
    let mut best = 0.0f64;
    for r in records.iter().filter(|r| r.failure_type == kind) {
        let v = jaccard_oracle(w, &r.workflow) * r.severity * (-alpha * (now - r.timestamp) as f64).exp();
        best = best.max(v);
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn ucb_oracle(mean: f64, n: u64, parent: u64, c: f64, lambda: f64, risk: f64, beta: f64, div: f64) -> f64 {
    mean + c * ((parent as f64).ln() / n as f64).sqrt() - lambda * risk + beta * div
}

fn fitness_oracle(base: f64, composed: f64) -> f64 {
    match (base == 0.0, composed > 0.0) {
        (true, true) => f64::INFINITY,
        (true, false) => 0.0,
        _ => composed / base - 1.0,
    }
}

fn diversity_oracle(w: &WorkflowGraph, others: &[Vec<WorkflowGraph>]) -> f64 {
    if others.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for snap in others {
        let d = if snap.is_empty() {
            1.0
        } else {
            snap.iter().map(|o| 1.0 - jaccard_oracle(w, o)).fold(f64::INFINITY, f64::min)
        };
        sum += d;
    }
    sum / others.len() as f64
}

fn modularity_oracle(d: &DesignSummary, w: &ModularityWeights) -> f64 {
    let excess = (d.hierarchy_depth as i64 - w.d_max as i64).max(0) as f64;
    w.psi1 * (d.module_count as f64 / d.total_logic_count as f64)
        + w.psi2 * (d.reused_module_count as f64 / d.module_count as f64)
        - w.psi3 * excess
}

fn random_workflow(rng: &mut ChaCha8Rng, space: &MutationSpace) -> WorkflowGraph {
    let mut w = default_seed_workflow();
    for _ in 0..rng.random_range(0..8) {
        let action = MutationAction::ALL[rng.random_range(0..MutationAction::ALL.len())];
        if let Some(next) = mutate(&w, action, space, rng).applied() {
            w = next;
        }
    }
    w
}

fn small_space() -> MutationSpace {
    MutationSpace { models: vec!["coder-small".into(), "coder-medium".into()], ..MutationSpace::default() }
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let space = small_space();
    let mut mismatches: BTreeMap<&str, usize> = BTreeMap::new();
    let mut bump = |name, ok: bool| {
        *mismatches.entry(name).or_default() += usize::from(!ok);
    };

    for _ in 0..ORACLE_CASES {
        let a = random_workflow(&mut rng, &space);
        let b = random_workflow(&mut rng, &space);
        bump("similarity", close(flowsmith::workflow::similarity(&a, &b), jaccard_oracle(&a, &b)));
    }

    for _ in 0..ORACLE_CASES {
        let alpha = rng.random_range(0.01..0.5);
        let now = rng.random_range(0..30);
        let mut repo = FailureRepository::new(alpha);
        let mut records = Vec::new();
        for _ in 0..rng.random_range(0..6) {
            let kind = FailureType::ALL[rng.random_range(0..FailureType::ALL.len())];
            let sev = rng.random_range(0.01..=1.0);
            let r = FailureRecord::new(random_workflow(&mut rng, &space), kind, sev, rng.random_range(0..=now)).unwrap();
            records.push(r.clone());
            repo.record_failure(r);
        }
        let w = random_workflow(&mut rng, &space);
        let mut total = 0.0;
        for kind in FailureType::ALL {
            let o = risk_oracle(&records, &w, kind, alpha, now);
            total += o;
            bump("risk", close(repo.risk(&w, kind, now), o));
        }
        bump("risk", close(repo.total_risk(&w, now), total));
    }

    for _ in 0..ORACLE_CASES {
        let n = rng.random_range(1..50);
        let parent = rng.random_range(n..200);
        let args = (
            rng.random_range(0.0..=1.0),
            rng.random_range(0.1..3.0),
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..=1.0),
        );
        let (mean, c, lambda, risk, beta, div) = args;
        bump(
            "ucb",
            close(ucb(mean, n, parent, c, lambda, risk, beta, div), ucb_oracle(mean, n, parent, c, lambda, risk, beta, div)),
        );
    }
    bump("ucb", ucb(0.3, 0, 10, 1.0, 0.0, 0.0, 0.0, 0.0) == f64::INFINITY);

    for i in 0..ORACLE_CASES {
        let base = if i % 10 == 0 { 0.0 } else { rng.random_range(0.0..=1.0) };
        let composed = if i % 7 == 0 { 0.0 } else { rng.random_range(0.0..=1.0) };
        bump("fragment_fitness", close(fragment_fitness(base, composed), fitness_oracle(base, composed)));
    }

    for _ in 0..ORACLE_CASES {
        let w = random_workflow(&mut rng, &space);
        let others: Vec<Vec<WorkflowGraph>> = (0..rng.random_range(0..4))
            .map(|_| (0..rng.random_range(0..4)).map(|_| random_workflow(&mut rng, &space)).collect())
            .collect();
        let snaps: Vec<PopulationSnapshot> = others
            .iter()
            .enumerate()
            .map(|(i, ws)| PopulationSnapshot {
                population_index: i + 1,
                best_workflows: ws.iter().map(|w| (w.clone(), 0.5)).collect(),
                published_at: 0,
            })
            .collect();
        bump("diversity", close(diversity(&w, &snaps), diversity_oracle(&w, &others)));
    }

    for _ in 0..ORACLE_CASES {
        let module_count = rng.random_range(1..20);
        let d = DesignSummary {
            module_count,
            total_logic_count: rng.random_range(module_count..200),
            reused_module_count: rng.random_range(0..=module_count),
            hierarchy_depth: rng.random_range(1..10),
        };
        let w = ModularityWeights {
            psi1: rng.random_range(0.0..1.0),
            psi2: rng.random_range(0.0..1.0),
            psi3: rng.random_range(0.0..1.0),
            d_max: rng.random_range(1..6),
        };
        bump("modularity", close(modularity(&d, &w).unwrap(), modularity_oracle(&d, &w)));
    }

    let bad: Vec<String> = mismatches.iter().filter(|(_, &n)| n > 0).map(|(k, n)| format!("{k}: {n}")).collect();
    if bad.is_empty() {
        Verdict::new(true, format!("{} functions x {ORACLE_CASES} cases within {REL_TOL:e}", mismatches.len()))
    } else {
        Verdict::new(false, format!("mismatches {}", bad.join(", ")))
    }
}

// ---------------------------------------------------------------- pareto

fn vector(r: &EvaluationReport) -> [f64; 5] {
    [r.functional_score, -r.area, -r.power, r.timing_slack, -r.token_cost]
}

fn oracle_dominates(a: &[f64; 5], b: &[f64; 5]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

fn entry_key(e: &FrontierEntry) -> (String, [u64; 5]) {
    (e.workflow.hash(), vector(&e.report).map(f64::to_bits))
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0;
    for trial in 0..PARETO_TRIALS {
        let n = rng.random_range(1..=200);
        let mut candidates = Vec::with_capacity(n);
        for _ in 0..n {
            let id = rng.random_range(0..40);
            let workflow = WorkflowGraph::single(InvocationNode::of_kind(format!("n{id}"), OperatorKind::Generate, "coder-small"));
            let pick = |rng: &mut ChaCha8Rng, xs: &[f64]| xs[rng.random_range(0..xs.len())];
            let report = EvaluationReport {
                functional_score: pick(&mut rng, &[0.0, 0.25, 0.5, 0.75, 1.0]),
                area: pick(&mut rng, &[50.0, 80.0, 120.0]),
                power: pick(&mut rng, &[4.0, 8.0]),
                timing_slack: pick(&mut rng, &[-0.5, 0.0, 0.3]),
                token_cost: pick(&mut rng, &[0.5, 1.0, 2.0]),
                verification_level_reached: 2,
            };
            candidates.push(FrontierEntry { workflow, report });
        }
        let mut frontier = ParetoFrontier::new();
        for c in &candidates {
            frontier.insert(c.clone());
        }
        let mut expected: Vec<_> = candidates
            .iter()
            .filter(|c| !candidates.iter().any(|o| oracle_dominates(&vector(&o.report), &vector(&c.report))))
            .map(entry_key)
            .collect();
        expected.sort();
        expected.dedup();
        let mut got: Vec<_> = frontier.entries().iter().map(entry_key).collect();
        got.sort();
        if got != expected {
            return Verdict::new(false, format!("trial {trial}: frontier {} entries, brute force {}", got.len(), expected.len()));
        }
        worst = worst.max(n);
    }
    Verdict::new(true, format!("{PARETO_TRIALS} trials up to {worst} candidates match brute force"))
}

// ---------------------------------------------------------------- trap

fn is_trap(w: &WorkflowGraph) -> bool {
    w.operator_edges().any(|e| e == (OperatorKind::Generate, OperatorKind::Refine))
}

/// Trap-pattern evaluations logged after the run's first trap failure.
fn trap_evals_after_first_failure(log: &[EvalLogEntry]) -> usize {
    let Some(first) = log.iter().position(|e| is_trap(&e.workflow) && e.failure.is_some()) else {
        return 0;
    };
    log[first + 1..].iter().filter(|e| is_trap(&e.workflow)).count()
}

fn trap_count(variant: Variant) -> (usize, usize) {
    let scoring = Scoring::default();
    let balanced = ObjectiveSpec::new(ObjectiveKind::Balanced);
    let seed_wf = default_seed_workflow();
    let evaluator = LandscapeEvaluator(Landscape::Trap);
    let expander = MutationExpander::default();
    let (mut total, mut migration) = (0, 0);
    for seed in 0..SEEDS {
        let mut base = EngineConfig::new(EngineConfig::default_populations(), seed);
        base.decay_alpha = TRAP_ALPHA;
        for p in &mut base.populations {
            p.risk_precheck_threshold = TRAP_THETA;
        }
        let cfg = variant.apply(&base, &balanced);
        let setup = SearchSetup { task_id: "trap", seed_workflow: &seed_wf, evaluator: &evaluator, expander: &expander, scoring: &scoring };
        let r = run(&cfg, &setup).expect("trap run");
        total += trap_evals_after_first_failure(&r.eval_log);
        let first = r.eval_log.iter().position(|e| is_trap(&e.workflow) && e.failure.is_some());
        if let Some(f) = first {
            migration += r.eval_log[f + 1..].iter().filter(|e| is_trap(&e.workflow) && e.source == EvalSource::Migration).count();
        }
    }
    (total, migration)
}

fn criterion_3(full: (usize, usize), baseline: (usize, usize)) -> Verdict {
    let ratio = full.0 as f64 / baseline.0.max(1) as f64;
    Verdict::new(
        baseline.0 > 0 && ratio <= TRAP_RATIO,
        format!(
            "trap evaluations after first failure: shared {} ({} migration) vs unshared {} ({} migration), ratio {ratio:.3}, limit {TRAP_RATIO}",
            full.0, full.1, baseline.0, baseline.1
        ),
    )
}

// ---------------------------------------------------------------- UCT

const ARM_GOOD: f64 = 0.9;
const ARM_BAD: f64 = 0.1;

fn arm(op: OperatorKind) -> WorkflowGraph {
    WorkflowGraph::pipeline(vec![
        InvocationNode::of_kind("g", OperatorKind::Generate, "coder-small"),
        InvocationNode::of_kind("a", op, "coder-small"),
    ])
}

fn outcome(v2: f64) -> VerificationOutcome {
    VerificationOutcome {
        v1: 1,
        v2,
        v3: 0,
        metrics: Some(Metrics { area: 100.0, power: Some(8.0), timing_slack: Some(0.0) }),
        tokens_consumed: 0,
        failure: Some(OutcomeFailure { failure_type: FailureType::SimulationMismatch, detail: "synthetic".into() }),
        tests_passed: 0,
        tests_total: 0,
        missing_tool: None,
    }
}

struct TwoArms;

impl WorkflowEvaluator for TwoArms {
    fn evaluate(&self, w: &WorkflowGraph) -> Result<Evaluation, EvalError> {
        let v2 = if w.count_operator(OperatorKind::SyntaxValidator) > 0 {
            ARM_GOOD
        } else if w.count_operator(OperatorKind::WaveformAnalyzer) > 0 {
            ARM_BAD
        } else {
            0.5
        };
        Ok(Evaluation { outcome: outcome(v2), tokens_by_model: BTreeMap::new() })
    }
}

/// The root offers exactly two arms, in an order drawn from the rng; arms
/// are terminal.
struct ArmExpander;

impl Expander for ArmExpander {
    fn propose(&self, parent: &WorkflowGraph, _count: usize, rng: &mut dyn RngCore) -> Vec<WorkflowGraph> {
        if parent.len() != 1 {
            return Vec::new();
        }
        let mut arms = vec![arm(OperatorKind::SyntaxValidator), arm(OperatorKind::WaveformAnalyzer)];
        arms.shuffle(rng);
        arms
    }
}

fn criterion_4() -> Verdict {
    let scoring = Scoring::default();
    let seed_wf = default_seed_workflow();
    let good_hash = arm(OperatorKind::SyntaxValidator).hash();
    let bad_hash = arm(OperatorKind::WaveformAnalyzer).hash();
    let mut shares = Vec::new();
    for seed in 0..SEEDS {
        let mut p = PopulationConfig::new(ObjectiveSpec::new(ObjectiveKind::FunctionalityFirst));
        p.risk_lambda = 0.0;
        p.diversity_beta = 0.0;
        p.expansion_width = 2;
        let mut cfg = EngineConfig::new(vec![p], seed);
        cfg.max_iterations = UCT_ITERATIONS;
        cfg.early_stop_patience = None;
        cfg.migration = false;
        cfg.failure_sharing = false;
        let setup = SearchSetup { task_id: "arms", seed_workflow: &seed_wf, evaluator: &TwoArms, expander: &ArmExpander, scoring: &scoring };
        let r = run(&cfg, &setup).expect("bandit run");
        let visits = |h: &str| r.trees[0].nodes().iter().filter(|n| n.workflow.hash() == h).map(|n| n.visits).sum::<u64>();
        let (g, b) = (visits(&good_hash), visits(&bad_hash));
        shares.push(g as f64 / (g + b).max(1) as f64);
    }
    let ok = shares.iter().filter(|&&s| s >= UCT_SHARE).count();
    let shown: Vec<String> = shares.iter().map(|s| format!("{s:.2}")).collect();
    Verdict::new(ok >= 9, format!("better arm share >= {UCT_SHARE} in {ok}/{SEEDS} seeds [{}]", shown.join(" ")))
}

// ---------------------------------------------------------------- cooperative

fn criterion_5(full: (usize, usize), baseline: (usize, usize)) -> Verdict {
    let cfg = RunConfig::parse(
        "[ablate]\nlandscape = \"multi_objective\"\nseeds = 10\nvariants = [\"full\", \"single_population\"]\n",
    )
    .expect("ablation config");
    let report = run_ablation(&cfg, None, None).expect("ablation");
    let coop = report.cooperative.expect("cooperative check");
    let degraded = baseline.0 > full.0;
    Verdict::new(
        coop.passed && degraded,
        format!(
            "full >= single_population in {}/{} seeds (need {}); unshared trap count {} vs shared {}",
            coop.wins, coop.seeds, coop.required, baseline.0, full.0
        ),
    )
}

// ---------------------------------------------------------------- determinism

fn search_json(dir: &Path, config: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_flowsmith"))
        .args(["search", "--config"])
        .arg(config)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let mut files = Vec::new();
    for task in ["mux", "multi_objective"] {
        let p = dir.join(task).join("search_result.json");
        files.push((task.to_string(), std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?));
    }
    files.push(("stdout".into(), out.stdout));
    Ok(files)
}

fn criterion_6() -> Verdict {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let config = tmp.path().join(format!("{name}.toml"));
        let text = format!(
            "tasks = [{:?}, \"multi_objective\"]\noutput_dir = {:?}\n[engine]\nrng_seed = 11\n[backend]\nkind = \"synthetic\"\nmock_fixtures = {:?}\n",
            fixtures().join("tasks/mux"),
            out,
            fixtures().join("mock"),
        );
        std::fs::write(&config, text).expect("write config");
        match search_json(&out, &config) {
            Ok(files) => runs.push(files),
            Err(e) => return Verdict::new(false, format!("search failed: {e}")),
        }
    }
    let same = runs[0] == runs[1];
    let bytes: usize = runs[0].iter().map(|(_, b)| b.len()).sum();
    Verdict::new(same, format!("two runs, seed 11, {} outputs, {bytes} bytes, identical: {same}", runs[0].len()))
}

// ---------------------------------------------------------------- verification

#[derive(Deserialize)]
struct Sample {
    file: String,
    class: String,
    passed: usize,
}

fn criterion_7() -> Verdict {
    let task = TaskDescriptor::load(&fixtures().join("tasks/mux")).expect("mux task");
    let samples: Vec<Sample> =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("code/manifest.json")).expect("manifest")).expect("manifest json");
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    for s in &samples {
        *classes.entry(s.class.clone()).or_default() += 1;
        let code = std::fs::read_to_string(fixtures().join("code").join(&s.file)).expect("sample");
        let o = verify(&code, &task, 3, &BuiltinBackend::default()).expect("verify");
        if let Err(e) = o.check_invariants() {
            return Verdict::new(false, format!("{}: {e}", s.file));
        }
        let ok = match s.class.as_str() {
            "invalid" => o.v1 == 0,
            class => o.v1 == 1 && o.tests_total == 10 && o.v2 == s.passed as f64 / 10.0 && (o.v3 == 1) == (class == "passing"),
        };
        if !ok {
            return Verdict::new(false, format!("{}: got {o}", s.file));
        }
    }
    let summary: Vec<String> = classes.iter().map(|(k, n)| format!("{n} {k}")).collect();
    let external = if ["iverilog", "vvp", "yosys"].iter().all(|t| tool_available(t)) {
        let backend = ExternalBackend { config: ExternalConfig::default() };
        let golden = task.golden.as_ref().expect("golden");
        let reference = task.reference_metrics.as_ref().expect("reference metrics");
        match verify(golden, &task, 3, &backend) {
            Ok(o) if o.passes(3) => match o.metrics {
                Some(m) if (m.area - reference.area).abs() <= GOLDEN_TOL * reference.area => format!("external golden area {:.1}", m.area),
                other => return Verdict::new(false, format!("external golden metrics {other:?} vs {reference:?}")),
            },
            other => return Verdict::new(false, format!("external golden run: {other:?}")),
        }
    } else {
        "external tools absent, skipped".to_string()
    };
    Verdict::new(true, format!("{} samples ({}) exact; {external}", samples.len(), summary.join(", ")))
}

// ---------------------------------------------------------------- accounting

/// Reports v2 rising over the first three calls and flat afterwards.
struct Stagnant {
    calls: Mutex<u64>,
}

const STAGNATION_START: u64 = 3;
const PATIENCE: u64 = 5;

impl WorkflowEvaluator for Stagnant {
    fn evaluate(&self, _: &WorkflowGraph) -> Result<Evaluation, EvalError> {
        let mut n = self.calls.lock().unwrap();
        *n += 1;
        let v2 = 0.2 * (*n).min(STAGNATION_START) as f64;
        Ok(Evaluation { outcome: outcome(v2), tokens_by_model: BTreeMap::new() })
    }
}

fn token_identity(r: &SearchRun) -> Result<u64, String> {
    let logged: u64 = r.eval_log.iter().map(|e| e.tokens).sum();
    if logged != r.result.statistics.tokens_consumed {
        return Err(format!("logged {logged} != statistics {}", r.result.statistics.tokens_consumed));
    }
    Ok(logged)
}

fn criterion_8() -> Verdict {
    let scoring = Scoring::default();
    let seed_wf = default_seed_workflow();
    let expander = MutationExpander::default();

    let mut cfg = EngineConfig::new(EngineConfig::default_populations(), 5);
    cfg.early_stop_patience = None;
    let evaluator = LandscapeEvaluator(Landscape::MultiObjective);
    let setup = SearchSetup { task_id: "multi_objective", seed_workflow: &seed_wf, evaluator: &evaluator, expander: &expander, scoring: &scoring };
    let r = run(&cfg, &setup).expect("budget run");
    let s = &r.result.statistics;
    let k = cfg.populations.len() as u64;
    let searched = r.eval_log.iter().filter(|e| e.source == EvalSource::Search).count() as u64;
    if s.evaluations != k * s.iterations_run || searched != s.evaluations || s.iterations_run != cfg.max_iterations {
        return Verdict::new(false, format!("evaluations {} vs K x iterations {k} x {}", s.evaluations, s.iterations_run));
    }
    let landscape_tokens = match token_identity(&r) {
        Ok(t) => t,
        Err(e) => return Verdict::new(false, e),
    };
    let expected: u64 = r.eval_log.iter().flat_map(|e| e.workflow.nodes().iter().map(estimated_tokens)).sum();
    if expected != landscape_tokens {
        return Verdict::new(false, format!("landscape tokens {landscape_tokens} != per-node sum {expected}"));
    }

    // Executed workflows: every trace's total is the sum of its node records.
    let task = TaskDescriptor::load(&fixtures().join("tasks/mux")).expect("mux task");
    let mock = Arc::new(MockBackend::load_dir(&fixtures().join("mock")).expect("mock fixtures"));
    let verifier = Arc::new(BuiltinBackend::default());
    let pipeline = PipelineEvaluator { task: task.clone(), model: mock.clone(), verifier: verifier.clone(), level: 3 };
    let mut cfg = EngineConfig::new(EngineConfig::default_populations(), 9);
    cfg.max_iterations = 6;
    cfg.early_stop_patience = None;
    let setup = SearchSetup { task_id: "mux", seed_workflow: &seed_wf, evaluator: &pipeline, expander: &expander, scoring: &scoring };
    let r = run(&cfg, &setup).expect("pipeline run");
    let pipeline_tokens = match token_identity(&r) {
        Ok(t) => t,
        Err(e) => return Verdict::new(false, e),
    };
    for e in &r.eval_log {
        let ok = match execute(&e.workflow, &task, mock.as_ref(), verifier.as_ref()) {
            Ok(trace) => {
                let per_node: u64 = trace.records.iter().map(|n| n.tokens_in + n.tokens_out).sum();
                trace.total_tokens == per_node && trace.total_tokens == e.tokens
            }
            Err(ExecError::NoCode { tokens_by_model }) => tokens_by_model.values().sum::<u64>() == e.tokens,
            Err(_) => e.tokens == 0,
        };
        if !ok {
            return Verdict::new(false, format!("token mismatch for {}", e.workflow.hash()));
        }
    }

    let mut p = PopulationConfig::new(ObjectiveSpec::new(ObjectiveKind::Balanced));
    p.diversity_beta = 0.0;
    let mut cfg = EngineConfig::new(vec![p], 3);
    cfg.early_stop_patience = Some(PATIENCE);
    let stagnant = Stagnant { calls: Mutex::new(0) };
    let setup = SearchSetup { task_id: "stagnant", seed_workflow: &seed_wf, evaluator: &stagnant, expander: &expander, scoring: &scoring };
    let r = run(&cfg, &setup).expect("stagnant run");
    let s = &r.result.statistics;
    let want = STAGNATION_START + PATIENCE;
    if s.iterations_run != want || s.stop_reason != Some(StopReason::EarlyStop) {
        return Verdict::new(false, format!("early stop at {} ({:?}), expected {want}", s.iterations_run, s.stop_reason));
    }
    Verdict::new(
        true,
        format!(
            "80 = 4 x 20 evaluations; tokens {landscape_tokens} landscape / {pipeline_tokens} executed match traces; early stop at {want}"
        ),
    )
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, f: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let status = if v.passed { "PASS" } else { "FAIL" };
        println!("criterion {n} {name:<24} {status}  {:>6.2}s  {}", start.elapsed().as_secs_f64(), v.detail);
        if !v.passed {
            failed.push(n);
        }
    };
    report(1, "formula oracles", &criterion_1);
    report(2, "pareto frontier", &criterion_2);
    let counts = std::cell::OnceCell::new();
    let trap = || *counts.get_or_init(|| (trap_count(Variant::Full), trap_count(Variant::NoFailureSharing)));
    report(3, "failure memory", &|| {
        let (full, baseline) = trap();
        criterion_3(full, baseline)
    });
    report(4, "uct sanity", &criterion_4);
    report(5, "cooperative advantage", &|| {
        let (full, baseline) = trap();
        criterion_5(full, baseline)
    });
    report(6, "determinism", &criterion_6);
    report(7, "verification gating", &criterion_7);
    report(8, "accounting identities", &criterion_8);
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
