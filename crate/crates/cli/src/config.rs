//! Experiment configuration: parsing, default resolution and diagnostics.

use std::fmt;
use std::path::{Path, PathBuf};

use concil::engine::{DEFAULT_EXPANSION_DIM, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2};
use concil::persistence::{read_manifest, MANIFEST_FILE};
use concil::{CicilSchedule, EngineConfig, SplitConfig, SyntheticSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Notice,
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Notice => "notice",
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

/// One finding about a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Dotted config key, empty for whole-file problems.
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}: {}", self.severity, self.message)
        } else {
            write!(f, "{}: {}: {}", self.severity, self.field, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generated banded synthetic table (see [`SyntheticSpec::banded`]).
    Synthetic {
        d_z: usize,
        classes: usize,
        concepts: usize,
        samples_per_class: usize,
        seed: u64,
        noise_sigma: f64,
    },
    /// Pre-extracted features in the bundle format. Relative paths are
    /// resolved against the config file's directory.
    Bundle { path: PathBuf },
}

impl DatasetConfig {
    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match *self {
            DatasetConfig::Synthetic {
                d_z,
                classes,
                concepts,
                samples_per_class,
                seed,
                noise_sigma,
            } => Some(SyntheticSpec::banded(d_z, classes, concepts, samples_per_class, seed, noise_sigma)),
            DatasetConfig::Bundle { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConceptOrder {
    /// Concepts enter in id order.
    Id,
    /// Concepts enter in the order their first class appears.
    FirstUse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Fraction of classes in the base phase.
    pub n: f64,
    /// Fraction of concepts in the base phase.
    pub m: f64,
    pub phases: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub concept_order: ConceptOrder,
}

impl ScheduleConfig {
    pub fn split(&self) -> SplitConfig {
        SplitConfig {
            train_fraction: self.train_fraction,
            seed: self.split_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Concil,
    Baseline,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Concil => "concil",
            LearnerKind::Baseline => "baseline",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "concil" => Some(LearnerKind::Concil),
            "baseline" => Some(LearnerKind::Baseline),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Tsv,
}

impl ReportFormat {
    pub fn delimiter(self) -> char {
        match self {
            ReportFormat::Csv => ',',
            ReportFormat::Tsv => '\t',
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Tsv => "tsv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub formats: Vec<ReportFormat>,
}

/// A fully resolved experiment: every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub learners: Vec<LearnerKind>,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub engine: EngineConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Replaces the model and split seeds: the split and backbone use
    /// `seed`, the concept expansion `seed + 1`. The dataset is untouched.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.schedule.split_seed = seed;
        self.engine.backbone_seed = seed;
        self.engine.concept_seed = seed.wrapping_add(1);
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }

    /// Resolves a bundle path against `base_dir`.
    pub fn bundle_path(&self, base_dir: &Path) -> Option<PathBuf> {
        match &self.dataset {
            DatasetConfig::Bundle { path } => Some(base_dir.join(path)),
            DatasetConfig::Synthetic { .. } => None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    n: Option<f64>,
    m: Option<f64>,
    phases: Option<usize>,
    train_fraction: Option<f64>,
    split_seed: Option<u64>,
    concept_order: Option<ConceptOrder>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEngine {
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    backbone_dim: Option<usize>,
    concept_dim: Option<usize>,
    backbone_seed: Option<u64>,
    concept_seed: Option<u64>,
    backbone_scale: Option<f64>,
    concept_scale: Option<f64>,
    growth_out_per_phase: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    formats: Option<Vec<ReportFormat>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    learners: Option<Vec<String>>,
    dataset: Option<DatasetConfig>,
    schedule: Option<RawSchedule>,
    engine: Option<RawEngine>,
    output: Option<RawOutput>,
}

struct Diagnostics(Vec<Diagnostic>);

impl Diagnostics {
    fn push(&mut self, severity: Severity, field: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity,
            field: field.to_string(),
            message: message.into(),
        });
    }

    /// Returns `value` or `default`, noting the substitution.
    fn or_default<T: fmt::Debug>(&mut self, value: Option<T>, field: &str, default: T) -> T {
        value.unwrap_or_else(|| {
            self.push(Severity::Notice, field, format!("not set; using default {default:?}"));
            default
        })
    }
}

/// Parses `text` and resolves defaults. Returns the resolved config (when
/// parsing succeeded) and every diagnostic found. `base_dir` anchors
/// relative bundle paths.
pub fn resolve_config(text: &str, base_dir: &Path) -> (Option<ExperimentConfig>, Vec<Diagnostic>) {
    let mut d = Diagnostics(Vec::new());
    let raw: RawConfig = match toml::from_str(text) {
        Ok(raw) => raw,
        Err(e) => {
            d.push(Severity::Error, "", e.to_string().trim_end());
            return (None, d.0);
        }
    };

    let learners = match raw.learners {
        None => {
            d.push(Severity::Notice, "learners", "not set; running concil and baseline");
            vec![LearnerKind::Concil, LearnerKind::Baseline]
        }
        Some(names) => {
            let mut out = Vec::new();
            for name in &names {
                match LearnerKind::parse(name) {
                    Some(k) if out.contains(&k) => d.push(Severity::Error, "learners", format!("`{name}` listed twice")),
                    Some(k) => out.push(k),
                    None => d.push(Severity::Error, "learners", format!("unknown learner `{name}` (expected concil or baseline)")),
                }
            }
            if names.is_empty() {
                d.push(Severity::Error, "learners", "at least one learner is required");
            }
            out
        }
    };

    let Some(dataset) = raw.dataset else {
        d.push(Severity::Error, "dataset", "missing dataset section");
        return (None, d.0);
    };

    let s = raw.schedule.unwrap_or_default();
    let schedule = ScheduleConfig {
        n: d.or_default(s.n, "schedule.n", 0.5),
        m: d.or_default(s.m, "schedule.m", 0.5),
        phases: d.or_default(s.phases, "schedule.phases", 2),
        train_fraction: d.or_default(s.train_fraction, "schedule.train_fraction", 0.5),
        split_seed: d.or_default(s.split_seed, "schedule.split_seed", 0),
        concept_order: d.or_default(s.concept_order, "schedule.concept_order", ConceptOrder::Id),
    };

    let e = raw.engine.unwrap_or_default();
    let defaults = EngineConfig::default();
    let engine = EngineConfig {
        lambda1: d.or_default(e.lambda1, "engine.lambda1", DEFAULT_LAMBDA1),
        lambda2: d.or_default(e.lambda2, "engine.lambda2", DEFAULT_LAMBDA2),
        backbone_dim: d.or_default(e.backbone_dim, "engine.backbone_dim", DEFAULT_EXPANSION_DIM),
        concept_dim: d.or_default(e.concept_dim, "engine.concept_dim", DEFAULT_EXPANSION_DIM),
        backbone_seed: d.or_default(e.backbone_seed, "engine.backbone_seed", defaults.backbone_seed),
        concept_seed: d.or_default(e.concept_seed, "engine.concept_seed", defaults.concept_seed),
        backbone_scale: e.backbone_scale,
        concept_scale: e.concept_scale,
        growth_out_per_phase: e.growth_out_per_phase,
    };

    let o = raw.output.unwrap_or_default();
    if o.dir.is_none() {
        d.push(Severity::Warning, "output.dir", "not set; `run` will require --output-dir");
    }
    let formats = d.or_default(o.formats, "output.formats", vec![ReportFormat::Csv]);
    if formats.is_empty() {
        d.push(Severity::Error, "output.formats", "at least one report format is required");
    }

    let config = ExperimentConfig {
        learners,
        dataset,
        schedule,
        engine,
        output: OutputConfig { dir: o.dir, formats },
    };
    check_config(&config, base_dir, &mut d);
    (Some(config), d.0)
}

/// Constraint checks on a resolved config.
fn check_config(config: &ExperimentConfig, base_dir: &Path, d: &mut Diagnostics) {
    if let Err(e) = config.engine.validate() {
        d.push(Severity::Error, "engine", e.to_string());
    }
    let s = &config.schedule;
    if !(0.0..=1.0).contains(&s.train_fraction) {
        d.push(Severity::Error, "schedule.train_fraction", format!("must lie in [0, 1], got {}", s.train_fraction));
    }

    // Class and concept counts, when knowable without running.
    let counts = match &config.dataset {
        DatasetConfig::Synthetic { .. } => {
            let spec = config.dataset.synthetic_spec().expect("synthetic");
            match spec.validate() {
                Ok(()) => Some((spec.classes, spec.concepts)),
                Err(e) => {
                    d.push(Severity::Error, "dataset", e.to_string());
                    None
                }
            }
        }
        DatasetConfig::Bundle { .. } => {
            let dir = config.bundle_path(base_dir).expect("bundle");
            if !dir.join(MANIFEST_FILE).is_file() {
                d.push(
                    Severity::Warning,
                    "dataset.path",
                    format!("no bundle manifest at {}; schedule feasibility not checked", dir.display()),
                );
                None
            } else {
                match read_manifest(&dir) {
                    Ok(m) => Some((m.class_count, m.concept_count)),
                    Err(e) => {
                        d.push(Severity::Error, "dataset.path", e.to_string());
                        None
                    }
                }
            }
        }
    };
    let schedule_check = match counts {
        Some((classes, concepts)) => CicilSchedule::build(classes, concepts, s.n, s.m, s.phases).map(|_| ()),
        // Fraction and phase-count checks only.
        None => CicilSchedule::build(1_000_000, 1_000_000, s.n, s.m, s.phases).map(|_| ()),
    };
    if let Err(e) = schedule_check {
        d.push(Severity::Error, "schedule", e.to_string());
    }
}

/// Reads and resolves a config file, listing every violated constraint.
pub fn validate_config(path: &Path) -> Vec<Diagnostic> {
    match std::fs::read_to_string(path) {
        Ok(text) => resolve_config(&text, base_dir_of(path)).1,
        Err(e) => vec![Diagnostic {
            severity: Severity::Error,
            field: String::new(),
            message: format!("cannot read {}: {e}", path.display()),
        }],
    }
}

pub fn base_dir_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(|d| d.severity == Severity::Error)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
learners = ["concil", "baseline"]

[dataset]
source = "synthetic"
d_z = 16
classes = 10
concepts = 12
samples_per_class = 40
seed = 7
noise_sigma = 0.01

[schedule]
n = 0.5
m = 0.5
phases = 5
train_fraction = 0.5
split_seed = 0
concept_order = "id"

[engine]
lambda1 = 0.1
lambda2 = 0.1
backbone_dim = 64
concept_dim = 64
backbone_seed = 0
concept_seed = 1

[output]
dir = "out"
formats = ["csv"]
"#;

    fn resolve(text: &str) -> (Option<ExperimentConfig>, Vec<Diagnostic>) {
        resolve_config(text, Path::new("."))
    }

    #[test]
    fn well_formed_config_has_no_diagnostics() {
        let (cfg, diags) = resolve(FULL);
        assert_eq!(diags, vec![]);
        assert_eq!(cfg.unwrap().schedule.phases, 5);
    }

    #[test]
    fn missing_lambda_gets_default_with_notice() {
        let text = FULL.replace("lambda1 = 0.1\n", "");
        let (cfg, diags) = resolve(&text);
        assert_eq!(cfg.unwrap().engine.lambda1, 500.0);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Notice);
        assert_eq!(diags[0].field, "engine.lambda1");
    }

    #[test]
    fn too_many_phases_is_infeasible() {
        let text = FULL.replace("phases = 5", "phases = 9");
        let diags = resolve(&text).1;
        assert_eq!(diags.len(), 1);
        assert_eq!((diags[0].severity, diags[0].field.as_str()), (Severity::Error, "schedule"));
    }

    #[test]
    fn every_violation_is_listed() {
        let text = FULL
            .replace("lambda2 = 0.1", "lambda2 = -1.0")
            .replace("train_fraction = 0.5", "train_fraction = 1.5")
            .replace(r#"["concil", "baseline"]"#, r#"["concil", "sgd"]"#);
        let diags = resolve(&text).1;
        let fields: Vec<&str> = diags.iter().map(|d| d.field.as_str()).collect();
        assert_eq!(fields, ["learners", "engine", "schedule.train_fraction"]);
        assert!(has_errors(&diags));
    }

    #[test]
    fn unknown_keys_and_syntax_errors_are_reported() {
        let diags = resolve(&FULL.replace("[engine]", "[engine]\nlambda3 = 1.0")).1;
        assert!(has_errors(&diags));
        assert!(diags[0].message.contains("lambda3"));
        assert!(has_errors(&resolve("learners = [").1));
    }

    #[test]
    fn missing_bundle_is_a_warning() {
        let text = r#"
[dataset]
source = "bundle"
path = "does/not/exist"
"#;
        let (cfg, diags) = resolve(text);
        assert!(cfg.is_some());
        assert!(!has_errors(&diags));
        assert!(diags.iter().any(|d| d.severity == Severity::Warning && d.field == "dataset.path"));
    }

    #[test]
    fn echo_round_trips_without_diagnostics() {
        let cfg = resolve(FULL).0.unwrap();
        let (again, diags) = resolve(&cfg.to_toml());
        assert_eq!(diags, vec![]);
        assert_eq!(again.unwrap(), cfg);
    }

    #[test]
    fn seed_override() {
        let cfg = resolve(FULL).0.unwrap().with_seed(42);
        assert_eq!((cfg.schedule.split_seed, cfg.engine.backbone_seed, cfg.engine.concept_seed), (42, 42, 43));
    }
}
