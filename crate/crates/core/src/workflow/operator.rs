use std::fmt;

use serde::{Deserialize, Serialize};

/// Model name carried by nodes that never reach a language model
/// (verification operators and the ensemble vote).
pub const TOOL_MODEL: &str = "tool";

/// The operator catalog a workflow node can instantiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Generate,
    AnalyzeProblem,
    Ensemble,
    Refine,
    TestCaseAuthor,
    SyntaxValidator,
    SimulationExecutor,
    WaveformAnalyzer,
    CircuitOptimizer,
    HierarchicalComposer,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 10] = [
        OperatorKind::Generate,
        OperatorKind::AnalyzeProblem,
        OperatorKind::Ensemble,
        OperatorKind::Refine,
        OperatorKind::TestCaseAuthor,
        OperatorKind::SyntaxValidator,
        OperatorKind::SimulationExecutor,
        OperatorKind::WaveformAnalyzer,
        OperatorKind::CircuitOptimizer,
        OperatorKind::HierarchicalComposer,
    ];

    /// Operators bound to the verification pipeline instead of a model.
    pub fn is_verification(self) -> bool {
        matches!(
            self,
            OperatorKind::SyntaxValidator
                | OperatorKind::SimulationExecutor
                | OperatorKind::WaveformAnalyzer
        )
    }

    pub fn is_model_invoking(self) -> bool {
        !self.is_verification() && self != OperatorKind::Ensemble
    }

    /// Whether a successful invocation replaces the code artifact.
    pub fn produces_code(self) -> bool {
        matches!(
            self,
            OperatorKind::Generate
                | OperatorKind::Refine
                | OperatorKind::CircuitOptimizer
                | OperatorKind::HierarchicalComposer
                | OperatorKind::Ensemble
        )
    }

    pub fn default_format(self) -> OutputFormat {
        if self.produces_code() {
            OutputFormat::CodeBlock
        } else {
            OutputFormat::RawText
        }
    }

    /// Prompt template used when a mutation introduces a fresh node.
    ///
    /// Slots: `{spec}` is the task text, `{inputs}` the labelled outputs of
    /// predecessor nodes, `{verification_report}` any verifier feedback
    /// forwarded by predecessors.
    pub fn default_prompt(self) -> &'static str {
        match self {
            OperatorKind::Generate => {
                "Write a synthesizable Verilog module for the following specification.\n\
                 {spec}\n{inputs}\nReturn the module in a single ```verilog code block."
            }
            OperatorKind::AnalyzeProblem => {
                "Analyze this hardware specification. List the ports, the state elements, \
                 corner cases and a short implementation plan.\n{spec}"
            }
            OperatorKind::Ensemble => "Select the most consistent implementation.\n{inputs}",
            OperatorKind::Refine => {
                "Improve the Verilog implementation below so that it meets the specification \
                 and fixes every reported problem.\n{spec}\n{inputs}\n{verification_report}\n\
                 Return the corrected module in a single ```verilog code block."
            }
            OperatorKind::TestCaseAuthor => {
                "Enumerate input vectors, including boundary values, that exercise the \
                 following design and state the expected outputs.\n{spec}\n{inputs}"
            }
            OperatorKind::SyntaxValidator => "Check syntax of the current design.",
            OperatorKind::SimulationExecutor => "Simulate the current design against the testbench.",
            OperatorKind::WaveformAnalyzer => {
                "Compare simulated outputs against the expected behaviour."
            }
            OperatorKind::CircuitOptimizer => {
                "Rewrite the Verilog module to reduce area, power and critical path depth \
                 without changing its behaviour.\n{spec}\n{inputs}\n{verification_report}\n\
                 Return the optimized module in a single ```verilog code block."
            }
            OperatorKind::HierarchicalComposer => {
                "Restructure the design into reusable submodules and a top module that \
                 instantiates them.\n{spec}\n{inputs}\n\
                 Return all modules in a single ```verilog code block."
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::Generate => "generate",
            OperatorKind::AnalyzeProblem => "analyze_problem",
            OperatorKind::Ensemble => "ensemble",
            OperatorKind::Refine => "refine",
            OperatorKind::TestCaseAuthor => "test_case_author",
            OperatorKind::SyntaxValidator => "syntax_validator",
            OperatorKind::SimulationExecutor => "simulation_executor",
            OperatorKind::WaveformAnalyzer => "waveform_analyzer",
            OperatorKind::CircuitOptimizer => "circuit_optimizer",
            OperatorKind::HierarchicalComposer => "hierarchical_composer",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    RawText,
    CodeBlock,
    Structured,
}
