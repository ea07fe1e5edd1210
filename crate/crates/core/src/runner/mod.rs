//! Config-driven search, verification and ablation runs, shared by the
//! service and the command line.

pub mod ablate;
mod config;

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ablate::{run_ablation, AblationReport, AblationRow, Variant, CSV_HEADER, VARIANT_NAMES};
pub use config::{
    AblateSection, BackendSection, ConfigError, EngineSection, FailureSection, ObjectiveSection, PopulationSection,
    RunConfig,
};

use crate::executor::{HttpBackend, MockBackend, ModelBackend};
use crate::search::{
    run, CachedEvaluator, LandscapeEvaluator, MigrationRecord, MutationExpander, PipelineEvaluator, SearchResult,
    SearchSetup, WorkflowEvaluator,
};
use crate::verify::{
    verify, BuiltinBackend, ExternalBackend, ExternalConfig, Landscape, TaskDescriptor, VerificationBackend,
    VerificationOutcome,
};
use crate::workflow::{InvocationNode, OperatorKind, WorkflowGraph};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("required tool '{0}' was not found")]
    MissingTool(String),
    #[error("{0}")]
    Task(String),
    #[error("writing outputs: {0}")]
    Io(#[from] io::Error),
}

/// Single `generate` node on the small coder model.
pub fn default_seed_workflow() -> WorkflowGraph {
    WorkflowGraph::single(InvocationNode::of_kind("n0", OperatorKind::Generate, "coder-small"))
}

/// Looks `program` up the way a shell would.
pub fn tool_available(program: &str) -> bool {
    let p = Path::new(program);
    if p.components().count() > 1 {
        return p.is_file();
    }
    std::env::var_os("PATH").is_some_and(|paths| std::env::split_paths(&paths).any(|d| d.join(program).is_file()))
}

fn require_tools(tools: &ExternalConfig) -> Result<(), RunError> {
    for t in [&tools.iverilog, &tools.vvp, &tools.yosys] {
        if !tool_available(t) {
            return Err(RunError::MissingTool(t.clone()));
        }
    }
    Ok(())
}

enum TaskSource {
    Landscape(Landscape),
    Bundle(TaskDescriptor),
}

struct PreparedTask {
    id: String,
    source: TaskSource,
}

/// Search outputs for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub task_id: String,
    #[serde(default)]
    pub result: Option<SearchResult>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub tree_dumps: Vec<String>,
    #[serde(default)]
    pub migrations: Vec<MigrationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub tasks: Vec<TaskRun>,
    pub summary: String,
}

impl SearchReport {
    pub fn any_failed(&self) -> bool {
        self.tasks.iter().any(|t| t.error.is_some())
    }
}

/// Overrides a caller may apply on top of the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchOverrides {
    pub seed: Option<u64>,
    /// Restricts the run to these task ids.
    pub tasks: Option<Vec<String>>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_seed_workflow(cfg: &RunConfig, base: &Path) -> Result<WorkflowGraph, ConfigError> {
    let Some(p) = &cfg.seed_workflow else {
        return Ok(default_seed_workflow());
    };
    let path = resolve(base, p);
    let text = fs::read_to_string(&path).map_err(|e| ConfigError::new(format!("seed_workflow {}: {e}", path.display())))?;
    let wf: WorkflowGraph =
        serde_json::from_str(&text).map_err(|e| ConfigError::new(format!("seed_workflow {}: {e}", path.display())))?;
    wf.validate().map_err(|v| ConfigError::new(format!("seed_workflow {} is invalid: {v:?}", path.display())))?;
    Ok(wf)
}

fn prepare_tasks(cfg: &RunConfig, raw: &str, base: &Path, only: Option<&[String]>) -> Result<Vec<PreparedTask>, ConfigError> {
    let mut tasks = Vec::new();
    for entry in &cfg.tasks {
        let task = match entry.parse::<Landscape>() {
            Ok(l) => {
                if !cfg.backend.is_synthetic() {
                    return Err(ConfigError::new(format!("landscape task '{entry}' needs the synthetic backend")).at_key(raw, "tasks"));
                }
                PreparedTask { id: entry.clone(), source: TaskSource::Landscape(l) }
            }
            Err(_) => {
                let dir = resolve(base, Path::new(entry));
                let t = TaskDescriptor::load(&dir).map_err(|e| ConfigError::new(e.to_string()).at_key(raw, "tasks"))?;
                PreparedTask { id: t.task_id.clone(), source: TaskSource::Bundle(t) }
            }
        };
        tasks.push(task);
    }
    if let Some(only) = only {
        for name in only {
            if !tasks.iter().any(|t| &t.id == name) {
                return Err(ConfigError::new(format!("task '{name}' is not listed in the config")).at_key(raw, "tasks"));
            }
        }
        tasks.retain(|t| only.contains(&t.id));
    }
    if tasks.is_empty() {
        return Err(ConfigError::new("no tasks to run").at_key(raw, "tasks"));
    }
    Ok(tasks)
}

struct Backends {
    model: Arc<dyn ModelBackend>,
    verifier: Arc<dyn VerificationBackend>,
    cache: bool,
}

fn mock_backend(base: &Path, fixtures: &Option<PathBuf>) -> Result<MockBackend, ConfigError> {
    match fixtures {
        None => Ok(MockBackend::new()),
        Some(p) => {
            let dir = resolve(base, p);
            MockBackend::load_dir(&dir).map_err(|e| ConfigError::new(format!("mock_fixtures {}: {e}", dir.display())))
        }
    }
}

fn backends(cfg: &RunConfig, base: &Path) -> Result<Backends, RunError> {
    Ok(match &cfg.backend {
        BackendSection::Synthetic { mock_fixtures, proxy } => Backends {
            model: Arc::new(mock_backend(base, mock_fixtures)?),
            verifier: Arc::new(BuiltinBackend { proxy: proxy.clone() }),
            cache: true,
        },
        BackendSection::ExternalTools { mock_fixtures, tools } => {
            require_tools(tools)?;
            Backends {
                model: Arc::new(mock_backend(base, mock_fixtures)?),
                verifier: Arc::new(ExternalBackend { config: tools.clone() }),
                cache: true,
            }
        }
        BackendSection::Http { model, tools } => {
            require_tools(tools)?;
            let http = HttpBackend::new(model.clone()).map_err(|e| ConfigError::new(e.to_string()))?;
            Backends { model: Arc::new(http), verifier: Arc::new(ExternalBackend { config: tools.clone() }), cache: false }
        }
    })
}

/// Parses `raw`, runs the engine on every selected task and collects the
/// outputs. Relative paths resolve against `base`.
pub fn run_search(raw: &str, base: &Path, overrides: &SearchOverrides) -> Result<SearchReport, RunError> {
    let cfg = RunConfig::parse(raw)?;
    let tasks = prepare_tasks(&cfg, raw, base, overrides.tasks.as_deref())?;
    let seed_wf = load_seed_workflow(&cfg, base)?;
    let be = backends(&cfg, base)?;
    let seed = overrides.seed.unwrap_or(cfg.engine.rng_seed);
    let engine = cfg.engine_config(seed);
    let scoring = cfg.scoring();
    let expander = MutationExpander::default();

    let mut runs = Vec::new();
    for task in tasks {
        tracing::info!(task = %task.id, seed, "search started");
        let evaluator: Box<dyn WorkflowEvaluator> = match task.source {
            TaskSource::Landscape(l) => Box::new(LandscapeEvaluator(l)),
            TaskSource::Bundle(t) => {
                let p = PipelineEvaluator {
                    task: t,
                    model: Arc::clone(&be.model),
                    verifier: Arc::clone(&be.verifier),
                    level: cfg.verification_level,
                };
                if be.cache {
                    Box::new(CachedEvaluator::new(p))
                } else {
                    Box::new(p)
                }
            }
        };
        let setup = SearchSetup {
            task_id: &task.id,
            seed_workflow: &seed_wf,
            evaluator: evaluator.as_ref(),
            expander: &expander,
            scoring: &scoring,
        };
        runs.push(match run(&engine, &setup) {
            Ok(r) => TaskRun {
                task_id: task.id,
                tree_dumps: r.tree_dumps(),
                migrations: r.migrations,
                result: Some(r.result),
                error: None,
            },
            Err(e) => {
                tracing::error!(task = %task.id, error = %e, "search failed");
                TaskRun { task_id: task.id, result: None, error: Some(e.to_string()), tree_dumps: Vec::new(), migrations: Vec::new() }
            }
        });
    }
    let summary = summary_table(&runs);
    Ok(SearchReport { tasks: runs, summary })
}

/// Per task: best score per population objective, frontier size,
/// evaluations and risk rejections.
pub fn summary_table(runs: &[TaskRun]) -> String {
    let mut out = String::new();
    for t in runs {
        let _ = writeln!(out, "task {}", t.task_id);
        match (&t.result, &t.error) {
            (Some(r), _) => {
                let s = &r.statistics;
                for b in &r.best_per_population {
                    let _ = writeln!(out, "  population {} {:<20} best {:.6}", b.population, b.objective.as_str(), b.score);
                }
                let _ = writeln!(out, "  frontier size        {}", r.pareto_frontier.len());
                let _ = writeln!(out, "  evaluations          {}", s.evaluations);
                let _ = writeln!(out, "  migration trials     {}", s.migration_evaluations);
                let _ = writeln!(out, "  risk rejections      {}", s.expansions_rejected_by_risk + s.migrations_rejected_by_risk);
                let _ = writeln!(out, "  migrations accepted  {}/{}", s.migrations_accepted, s.migrations_attempted);
                let _ = writeln!(out, "  iterations           {}", s.iterations_run);
            }
            (None, Some(e)) => {
                let _ = writeln!(out, "  error: {e}");
            }
            (None, None) => {}
        }
    }
    out
}

/// Writes `<dir>/summary.txt` and, per task, `search_result.json`,
/// `tree_<population>.txt` and `migrations.json`.
pub fn write_search_outputs(report: &SearchReport, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for t in &report.tasks {
        let td = dir.join(&t.task_id);
        fs::create_dir_all(&td)?;
        if let Some(r) = &t.result {
            fs::write(td.join("search_result.json"), to_json(r)? + "\n")?;
        }
        if let Some(e) = &t.error {
            fs::write(td.join("error.txt"), format!("{e}\n"))?;
        }
        for (i, dump) in t.tree_dumps.iter().enumerate() {
            fs::write(td.join(format!("tree_{i}.txt")), dump)?;
        }
        fs::write(td.join("migrations.json"), to_json(&t.migrations)? + "\n")?;
    }
    fs::write(dir.join("summary.txt"), &report.summary)
}

pub fn write_ablation_outputs(report: &AblationReport, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("ablation.csv"), report.to_csv())?;
    fs::write(dir.join("ablation_summary.txt"), report.table())
}

fn to_json<T: Serialize>(v: &T) -> io::Result<String> {
    serde_json::to_string_pretty(v).map_err(io::Error::other)
}

/// Output directory named by the config, resolved against `base`.
pub fn output_dir(raw: &str, base: &Path) -> Result<PathBuf, ConfigError> {
    Ok(resolve(base, &RunConfig::parse(raw)?.output_dir))
}

/// Ablation entry point taking raw config text.
pub fn run_ablation_text(raw: &str, base: &Path, seeds: Option<u64>) -> Result<AblationReport, RunError> {
    let cfg = RunConfig::parse(raw)?;
    let seed_wf = load_seed_workflow(&cfg, base)?;
    Ok(run_ablation(&cfg, seeds, Some(seed_wf))?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyBackendKind {
    #[default]
    Builtin,
    External,
}

/// Verifies one source file against a task bundle.
pub fn verify_file(code: &str, task_dir: &Path, level: u8, backend: VerifyBackendKind) -> Result<VerificationOutcome, RunError> {
    let task = TaskDescriptor::load(task_dir).map_err(|e| ConfigError::new(e.to_string()))?;
    let verifier: Box<dyn VerificationBackend> = match backend {
        VerifyBackendKind::Builtin => Box::new(BuiltinBackend::default()),
        VerifyBackendKind::External => {
            let cfg = ExternalConfig::default();
            require_tools(&cfg)?;
            Box::new(ExternalBackend { config: cfg })
        }
    };
    let out = verify(code, &task, level, verifier.as_ref()).map_err(|e| RunError::Task(e.to_string()))?;
    if let Some(t) = &out.missing_tool {
        return Err(RunError::MissingTool(t.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landscape_search_counts_every_evaluation() {
        let raw = "tasks = [\"multi_objective\"]\n[engine]\nmax_iterations = 20\nearly_stop_patience = 0\nrng_seed = 5\n";
        let r = run_search(raw, Path::new("."), &SearchOverrides::default()).unwrap();
        let s = &r.tasks[0].result.as_ref().unwrap().statistics;
        assert_eq!(s.evaluations, 80);
        assert_eq!(s.iterations_run, 20);
        assert!(r.summary.contains("evaluations          80"));
        assert_eq!(r.tasks[0].tree_dumps.len(), 4);
    }

    #[test]
    fn missing_task_directory_is_named() {
        let raw = "tasks = [\"no/such/task\"]\n";
        match run_search(raw, Path::new("/tmp"), &SearchOverrides::default()) {
            Err(RunError::Config(e)) => {
                assert!(e.message.contains("no/such/task"), "{e}");
                assert_eq!(e.line, Some(1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_task_filter_is_a_config_error() {
        let raw = "tasks = [\"trap\"]\n";
        let o = SearchOverrides { seed: None, tasks: Some(vec!["monotone".into()]) };
        assert!(matches!(run_search(raw, Path::new("."), &o), Err(RunError::Config(_))));
    }

    #[test]
    fn external_backend_without_tools() {
        let raw = "tasks = []\n[backend]\nkind = \"external_tools\"\n[backend.tools]\niverilog = \"flowsmith-no-such-binary\"\n";
        let cfg = RunConfig::parse(raw).unwrap();
        match backends(&cfg, Path::new(".")) {
            Err(RunError::MissingTool(t)) => assert_eq!(t, "flowsmith-no-such-binary"),
            _ => panic!("expected a missing tool"),
        }
    }

    #[test]
    fn outputs_are_reproducible() {
        let raw = "tasks = [\"trap\", \"monotone\"]\n[engine]\nmax_iterations = 6\nrng_seed = 9\n";
        let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
        for d in &dirs {
            let r = run_search(raw, Path::new("."), &SearchOverrides::default()).unwrap();
            write_search_outputs(&r, d.path()).unwrap();
        }
        for f in ["summary.txt", "trap/search_result.json", "trap/tree_0.txt", "monotone/migrations.json"] {
            let a = fs::read(dirs[0].path().join(f)).unwrap();
            let b = fs::read(dirs[1].path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }
}
