use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::executor::HttpConfig;
use crate::failure::SeverityTable;
use crate::objective::{Normalizer, ObjectiveKind, ObjectiveSpec, DEFAULT_BALANCED_WEIGHTS};
use crate::search::{EngineConfig, PopulationConfig, Scoring};
use crate::verify::{ExternalConfig, ProxyConstants};

/// A configuration problem, located in the source file when possible.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        ConfigError { file: None, line: None, message: message.into() }
    }

    /// Attaches the line of the first assignment to `key` in `raw`.
    pub fn at_key(mut self, raw: &str, key: &str) -> Self {
        self.line = self.line.or_else(|| key_line(raw, key));
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.file, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line of the first `key = ...` (or `[key]` table header) in `raw`.
fn key_line(raw: &str, key: &str) -> Option<usize> {
    raw.lines().position(|l| {
        let l = l.trim_start();
        let assigns = l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='));
        let header = l.trim_start_matches('[').strip_prefix(key).is_some_and(|rest| rest.starts_with(']'));
        assigns || header
    })
    .map(|i| i + 1)
}

fn line_of_offset(raw: &str, offset: usize) -> usize {
    raw[..offset.min(raw.len())].matches('\n').count() + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    pub objective: ObjectiveKind,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub exploration_c: Option<f64>,
    #[serde(default)]
    pub risk_lambda: Option<f64>,
    #[serde(default)]
    pub diversity_beta: Option<f64>,
    #[serde(default)]
    pub risk_precheck_threshold: Option<f64>,
    #[serde(default)]
    pub expansion_width: Option<usize>,
}

impl PopulationSection {
    fn to_config(&self, default_weights: &[f64]) -> PopulationConfig {
        let mut spec = ObjectiveSpec::new(self.objective);
        if self.objective == ObjectiveKind::Balanced {
            spec.weights = self.weights.clone().unwrap_or_else(|| default_weights.to_vec());
        }
        let mut p = PopulationConfig::new(spec);
        p.exploration_c = self.exploration_c.unwrap_or(p.exploration_c);
        p.risk_lambda = self.risk_lambda.unwrap_or(p.risk_lambda);
        p.diversity_beta = self.diversity_beta.unwrap_or(p.diversity_beta);
        p.risk_precheck_threshold = self.risk_precheck_threshold.unwrap_or(p.risk_precheck_threshold);
        p.expansion_width = self.expansion_width.unwrap_or(p.expansion_width);
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub max_iterations: u64,
    pub migration_interval: u64,
    pub migration_threshold: f64,
    /// 0 disables early stopping.
    pub early_stop_patience: u64,
    pub rng_seed: u64,
    pub snapshot_size: usize,
    /// Empty means the four standard populations.
    pub populations: Vec<PopulationSection>,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::new(Vec::new(), 0);
        EngineSection {
            max_iterations: e.max_iterations,
            migration_interval: e.migration_interval,
            migration_threshold: e.migration_threshold,
            early_stop_patience: e.early_stop_patience.unwrap_or(0),
            rng_seed: e.rng_seed,
            snapshot_size: e.snapshot_size,
            populations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub balanced_weights: Vec<f64>,
    pub normalizer: Normalizer,
    /// Cost per 1000 tokens by model name.
    pub prices: BTreeMap<String, f64>,
    pub default_price: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        let s = Scoring::default();
        ObjectiveSection {
            balanced_weights: DEFAULT_BALANCED_WEIGHTS.to_vec(),
            normalizer: s.normalizer,
            prices: s.prices,
            default_price: s.default_price,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureSection {
    pub decay_alpha: f64,
    pub severities: SeverityTable,
}

impl Default for FailureSection {
    fn default() -> Self {
        FailureSection { decay_alpha: crate::failure::DEFAULT_DECAY_ALPHA, severities: SeverityTable::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSection {
    /// Canned model outputs and the built-in simulator; landscape ids are
    /// accepted as tasks.
    Synthetic {
        #[serde(default)]
        mock_fixtures: Option<PathBuf>,
        #[serde(default)]
        proxy: ProxyConstants,
    },
    /// Canned model outputs checked with Icarus Verilog and Yosys.
    ExternalTools {
        #[serde(default)]
        mock_fixtures: Option<PathBuf>,
        #[serde(default)]
        tools: ExternalConfig,
    },
    /// A chat-completions API checked with Icarus Verilog and Yosys.
    Http {
        #[serde(default)]
        model: HttpConfig,
        #[serde(default)]
        tools: ExternalConfig,
    },
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection::Synthetic { mock_fixtures: None, proxy: ProxyConstants::default() }
    }
}

impl BackendSection {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, BackendSection::Synthetic { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub landscape: String,
    pub seeds: u64,
    pub first_seed: u64,
    pub variants: Vec<String>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            landscape: "multi_objective".into(),
            seeds: 10,
            first_seed: 0,
            variants: super::ablate::VARIANT_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Top-level run configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Task bundle directories, or landscape ids with the synthetic backend.
    #[serde(default)]
    pub tasks: Vec<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// JSON workflow every population starts from.
    #[serde(default)]
    pub seed_workflow: Option<PathBuf>,
    #[serde(default = "default_level")]
    pub verification_level: u8,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub failure: FailureSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub ablate: AblateSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_level() -> u8 {
    3
}

impl RunConfig {
    /// Parses and validates TOML text. Errors carry line numbers.
    pub fn parse(raw: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(raw).map_err(|e| ConfigError {
            file: None,
            line: e.span().map(|s| line_of_offset(raw, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate(raw)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { file: Some(path.to_path_buf()), line: None, message: e.to_string() })?;
        RunConfig::parse(&raw).map_err(|mut e| {
            e.file = Some(path.to_path_buf());
            e
        })
    }

    fn validate(&self, raw: &str) -> Result<(), ConfigError> {
        let err = |key: &str, msg: String| Err(ConfigError::new(msg).at_key(raw, key));
        if !(1..=3).contains(&self.verification_level) {
            return err("verification_level", format!("verification_level must be 1, 2 or 3, got {}", self.verification_level));
        }
        ObjectiveSpec::balanced(self.objective.balanced_weights.clone())
            .map_err(|e| ConfigError::new(e.to_string()).at_key(raw, "balanced_weights"))?;
        self.objective
            .normalizer
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()).at_key(raw, "normalizer"))?;
        if self.objective.prices.values().chain([&self.objective.default_price]).any(|p| !(p.is_finite() && *p >= 0.0)) {
            return err("prices", "prices must be non-negative".into());
        }
        self.failure
            .severities
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()).at_key(raw, "severities"))?;
        if self.failure.decay_alpha.is_nan() || self.failure.decay_alpha <= 0.0 {
            return err("decay_alpha", "decay_alpha must be positive".into());
        }
        self.engine_config(self.engine.rng_seed).validate().map_err(|e| {
            let key = match &e {
                crate::search::EngineError::Config(m) if m.starts_with("population") => "populations",
                _ => "engine",
            };
            ConfigError::new(e.to_string()).at_key(raw, key)
        })?;
        if self.ablate.seeds == 0 {
            return err("seeds", "ablate.seeds must be at least 1".into());
        }
        for v in &self.ablate.variants {
            v.parse::<super::ablate::Variant>().map_err(|e| ConfigError::new(e.to_string()).at_key(raw, "variants"))?;
        }
        self.ablate
            .landscape
            .parse::<crate::verify::Landscape>()
            .map_err(|e| ConfigError::new(e.to_string()).at_key(raw, "landscape"))?;
        Ok(())
    }

    pub fn populations(&self) -> Vec<PopulationConfig> {
        if self.engine.populations.is_empty() {
            EngineConfig::default_populations()
                .into_iter()
                .map(|mut p| {
                    if p.objective.kind == ObjectiveKind::Balanced {
                        p.objective.weights = self.objective.balanced_weights.clone();
                    }
                    p
                })
                .collect()
        } else {
            self.engine.populations.iter().map(|p| p.to_config(&self.objective.balanced_weights)).collect()
        }
    }

    pub fn engine_config(&self, seed: u64) -> EngineConfig {
        let e = &self.engine;
        let mut cfg = EngineConfig::new(self.populations(), seed);
        cfg.max_iterations = e.max_iterations;
        cfg.migration_interval = e.migration_interval;
        cfg.migration_threshold = e.migration_threshold;
        cfg.early_stop_patience = (e.early_stop_patience > 0).then_some(e.early_stop_patience);
        cfg.snapshot_size = e.snapshot_size;
        cfg.decay_alpha = self.failure.decay_alpha;
        cfg
    }

    pub fn scoring(&self) -> Scoring {
        Scoring {
            normalizer: self.objective.normalizer.clone(),
            prices: self.objective.prices.clone(),
            default_price: self.objective.default_price,
            severities: self.failure.severities.clone(),
        }
    }

    pub fn balanced_spec(&self) -> ObjectiveSpec {
        ObjectiveSpec { kind: ObjectiveKind::Balanced, weights: self.objective.balanced_weights.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_engine_defaults() {
        let cfg = RunConfig::parse("tasks = [\"trap\"]\n").unwrap();
        let e = cfg.engine_config(3);
        assert_eq!((e.max_iterations, e.migration_interval, e.early_stop_patience), (20, 3, Some(5)));
        assert_eq!(e.populations.len(), 4);
        assert!(cfg.backend.is_synthetic());
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let e = RunConfig::parse("tasks = [\"a\"]\n[engine]\nmax_iterations = \"x\"\n").unwrap_err();
        assert_eq!(e.line, Some(3), "{e}");
    }

    #[test]
    fn semantic_errors_point_at_keys() {
        let e = RunConfig::parse("tasks = []\n\n[engine]\nmigration_interval = 0\n").unwrap_err();
        assert!(e.message.contains("migration_interval"), "{e}");
        let e = RunConfig::parse("[ablate]\nvariants = [\"full\", \"no_migraton\"]\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.message.contains("no_failure_sharing"), "{e}");
        let e = RunConfig::parse("[objective]\nbalanced_weights = [0.5, 0.6, 0.1]\n").unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn backend_kinds_parse() {
        let cfg = RunConfig::parse("[backend]\nkind = \"external_tools\"\n[backend.tools]\nyosys = \"/opt/yosys\"\n").unwrap();
        match cfg.backend {
            BackendSection::ExternalTools { tools, .. } => assert_eq!(tools.yosys, "/opt/yosys"),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("[backend]\nkind = \"quantum\"\n").is_err());
    }

    #[test]
    fn custom_populations() {
        let raw = "[[engine.populations]]\nobjective = \"balanced\"\nweights = [1.0, 0.0, 0.0]\nrisk_lambda = 0.0\n";
        let cfg = RunConfig::parse(raw).unwrap();
        let p = cfg.populations();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].objective.weights, vec![1.0, 0.0, 0.0]);
        assert_eq!(p[0].risk_lambda, 0.0);
        assert_eq!(p[0].diversity_beta, 0.3);
    }
}
