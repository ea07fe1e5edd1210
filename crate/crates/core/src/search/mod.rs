//! Multi-population tree search over workflow graphs.

pub mod engine;
mod eval;
pub mod mcts;

pub use engine::{
    diversity, fragment_fitness, run, EngineConfig, EngineError, EvalLogEntry, EvalSource, FrontierItem,
    MigrationRecord, PopulationBest, PopulationSnapshot, Scores, SearchResult, SearchRun, SearchSetup, Statistics,
    StopReason,
};
pub use eval::{CachedEvaluator, EvalError, Evaluation, LandscapeEvaluator, PipelineEvaluator, Scoring, WorkflowEvaluator};
pub use mcts::{ucb, Expander, MutationExpander, PopulationConfig, StepContext, Tree, TreeNode};
