//! The phase loop. Training data for phase `t` is fetched once, while
//! phase `t` is processed, and dropped before evaluation; earlier phases'
//! training data is never requested again. Test sets of all tasks seen so
//! far are fetched for evaluation after every phase.

use std::fs;
use std::path::{Path, PathBuf};

use concil::harness::{generate_synthetic, slice_phase};
use concil::metrics::{class_accuracy, concept_accuracy};
use concil::persistence::{
    load_baseline_checkpoint, load_checkpoint, read_bundle, save_baseline_checkpoint, save_checkpoint, Digest,
};
use concil::{
    AccuracyHistory, BaselineState, CicilSchedule, ConceptHead, ContinualLearner, EngineConfig, LabeledTable,
    MetricsRecord, ModelState, PhaseBatch, SplitConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{ConceptOrder, DatasetConfig, ExperimentConfig, LearnerKind};
use crate::error::CliError;
use crate::report::{accuracy_table, metrics_table, parse_accuracy_table, ACCURACY_STEM, METRICS_STEM};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CONFIG_ECHO: &str = "config.toml";
pub const HISTORY_FILE: &str = "history.csv";
pub const PROGRESS_FILE: &str = "progress.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One data fetch: which split of which task (0-based), and which phase
/// was being processed at the time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEvent {
    pub during_phase: usize,
    pub split: Split,
    pub task: usize,
}

/// Lazily constructed per-phase data.
pub trait PhaseSource {
    fn phases(&self) -> usize;
    /// Called before any fetch made while processing phase `t`.
    fn enter_phase(&mut self, t: usize);
    fn train(&mut self, t: usize) -> Result<PhaseBatch, CliError>;
    fn test(&mut self, t: usize) -> Result<PhaseBatch, CliError>;
}

/// Slices phases out of an in-memory table on demand and records every
/// fetch.
#[derive(Debug, Clone)]
pub struct TableSource {
    table: LabeledTable,
    schedule: CicilSchedule,
    split: SplitConfig,
    current: usize,
    log: Vec<AccessEvent>,
}

impl TableSource {
    pub fn new(table: LabeledTable, schedule: CicilSchedule, split: SplitConfig) -> Self {
        Self {
            table,
            schedule,
            split,
            current: 0,
            log: Vec::new(),
        }
    }

    /// Loads the configured dataset and builds its schedule.
    pub fn from_config(config: &ExperimentConfig, base_dir: &Path) -> Result<Self, CliError> {
        let table = match &config.dataset {
            DatasetConfig::Synthetic { .. } => generate_synthetic(&config.dataset.synthetic_spec().expect("synthetic"))?,
            DatasetConfig::Bundle { .. } => read_bundle(config.bundle_path(base_dir).expect("bundle"))?,
        };
        let s = &config.schedule;
        let order = match s.concept_order {
            ConceptOrder::Id => (0..table.concept_count() as u32).collect(),
            ConceptOrder::FirstUse => table.concept_order_by_first_use(),
        };
        let schedule = CicilSchedule::build_with_concept_order(table.class_count(), &order, s.n, s.m, s.phases)?;
        Ok(Self::new(table, schedule, s.split()))
    }

    pub fn log(&self) -> &[AccessEvent] {
        &self.log
    }

    pub fn schedule(&self) -> &CicilSchedule {
        &self.schedule
    }

    fn fetch(&mut self, t: usize, split: Split) -> Result<PhaseBatch, CliError> {
        self.log.push(AccessEvent {
            during_phase: self.current,
            split,
            task: t,
        });
        let (train, test) = slice_phase(&self.table, &self.schedule, t, &self.split)?;
        Ok(match split {
            Split::Train => train,
            Split::Test => test,
        })
    }
}

impl PhaseSource for TableSource {
    fn phases(&self) -> usize {
        self.schedule.phases
    }

    fn enter_phase(&mut self, t: usize) {
        self.current = t;
    }

    fn train(&mut self, t: usize) -> Result<PhaseBatch, CliError> {
        self.fetch(t, Split::Train)
    }

    fn test(&mut self, t: usize) -> Result<PhaseBatch, CliError> {
        self.fetch(t, Split::Test)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LearnerState {
    Concil(ModelState),
    Baseline(BaselineState),
}

impl LearnerState {
    fn fit_base(kind: LearnerKind, batch: &PhaseBatch, config: &EngineConfig) -> Result<Self, concil::EngineError> {
        Ok(match kind {
            LearnerKind::Concil => LearnerState::Concil(ModelState::fit_base(batch, config)?),
            LearnerKind::Baseline => LearnerState::Baseline(BaselineState::fit_base(batch, config)?),
        })
    }

    fn absorb(&self, batch: &PhaseBatch) -> Result<Self, concil::EngineError> {
        Ok(match self {
            LearnerState::Concil(s) => LearnerState::Concil(s.absorb(batch)?),
            LearnerState::Baseline(s) => LearnerState::Baseline(s.absorb(batch)?),
        })
    }

    fn head(&self) -> &ConceptHead {
        match self {
            LearnerState::Concil(s) => ContinualLearner::head(s),
            LearnerState::Baseline(s) => ContinualLearner::head(s),
        }
    }

    fn save(&self, path: &Path) -> Result<Digest, CliError> {
        Ok(match self {
            LearnerState::Concil(s) => save_checkpoint(s, path)?,
            LearnerState::Baseline(s) => save_baseline_checkpoint(s, path)?,
        })
    }

    fn load(kind: LearnerKind, path: &Path) -> Result<Self, CliError> {
        Ok(match kind {
            LearnerKind::Concil => LearnerState::Concil(load_checkpoint(path)?),
            LearnerKind::Baseline => LearnerState::Baseline(load_baseline_checkpoint(path)?),
        })
    }
}

/// (concept accuracy, class accuracy) on one test task. Concept accuracy
/// covers the concepts annotated in that task's test set.
fn evaluate(head: &ConceptHead, test: &PhaseBatch) -> Result<(f64, f64), concil::EngineError> {
    let prediction = head.predict(test.features())?;
    let cols: Vec<usize> = test
        .concept_ids()
        .iter()
        .map(|id| {
            head.concept_ids()
                .iter()
                .position(|c| c == id)
                .ok_or_else(|| concil::EngineError::InvalidBatch(format!("concept {id} unknown to the model")))
        })
        .collect::<Result<_, _>>()?;
    let decisions = prediction.concept_decisions.select_cols(&cols);
    let invalid = |e: concil::metrics::MetricsError| concil::EngineError::InvalidBatch(e.to_string());
    let concept = concept_accuracy(&decisions, test.concepts()).map_err(invalid)?;
    let class = class_accuracy(&prediction.predicted_classes, &test.labels()).map_err(invalid)?;
    Ok((concept, class))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output.dir`.
    pub output_dir: Option<PathBuf>,
    /// A `checkpoints/phase-<t>` directory of an earlier run.
    pub resume_from: Option<PathBuf>,
    /// Directory that relative dataset paths are resolved against.
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub phases: usize,
    pub histories: Vec<(LearnerKind, AccuracyHistory)>,
    pub final_metrics: Vec<(LearnerKind, MetricsRecord)>,
    pub report_files: Vec<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Progress {
    completed_phases: usize,
    learners: Vec<LearnerKind>,
    /// Checkpoint digests, in `learners` order.
    digests: Vec<String>,
}

pub fn checkpoint_dir(output_dir: &Path, completed_phases: usize) -> PathBuf {
    output_dir.join(CHECKPOINT_DIR).join(format!("phase-{completed_phases}"))
}

fn checkpoint_file(dir: &Path, kind: LearnerKind) -> PathBuf {
    dir.join(format!("{}.ckpt", kind.name()))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(CliError::io(path))
}

/// Loads the dataset named by `config` and runs every learner through the
/// stream.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary, CliError> {
    let mut source = TableSource::from_config(config, &options.base_dir)?;
    run_with_source(config, &mut source, options)
}

struct Restored {
    start: usize,
    states: Vec<LearnerState>,
    histories: Vec<AccuracyHistory>,
}

fn restore(config: &ExperimentConfig, dir: &Path) -> Result<Restored, CliError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(CliError::io(path))
    };
    let echoed: ExperimentConfig =
        toml::from_str(&read(CONFIG_ECHO)?).map_err(|e| CliError::Resume(format!("unreadable config echo: {e}")))?;
    let strip = |c: &ExperimentConfig| {
        let mut c = c.clone();
        c.output.dir = None;
        c
    };
    if strip(&echoed) != strip(config) {
        return Err(CliError::Resume("checkpoint was written under a different configuration".into()));
    }
    let progress: Progress =
        toml::from_str(&read(PROGRESS_FILE)?).map_err(|e| CliError::Resume(format!("unreadable progress file: {e}")))?;
    if progress.learners != config.learners {
        return Err(CliError::Resume("learner list differs from checkpoint".into()));
    }
    let start = progress.completed_phases;
    let mut states = Vec::new();
    for (&kind, digest) in config.learners.iter().zip(&progress.digests) {
        let path = checkpoint_file(dir, kind);
        let state = LearnerState::load(kind, &path)?;
        let stored = fs::read(&path).map_err(CliError::io(&path))?;
        let tail = &stored[stored.len() - 32..];
        if Digest(tail.try_into().expect("32 bytes")).to_string() != *digest {
            return Err(CliError::Resume(format!("{} checkpoint digest differs from progress file", kind.name())));
        }
        if state.head().phase() as usize + 1 != start {
            return Err(CliError::Resume(format!("{} checkpoint is not at phase {start}", kind.name())));
        }
        states.push(state);
    }
    let histories =
        parse_accuracy_table(&read(HISTORY_FILE)?, ',', &config.learners).map_err(CliError::Resume)?;
    if histories.iter().any(|h| h.phases() != start) {
        return Err(CliError::Resume("history length disagrees with checkpoint phase".into()));
    }
    Ok(Restored {
        start,
        states,
        histories,
    })
}

/// Runs the phase loop over `source`, writing checkpoints after every
/// phase and reports at the end.
pub fn run_with_source(
    config: &ExperimentConfig,
    source: &mut dyn PhaseSource,
    options: &RunOptions,
) -> Result<RunSummary, CliError> {
    let output_dir = options
        .output_dir
        .clone()
        .or_else(|| config.output.dir.clone())
        .ok_or(CliError::NoOutputDir)?;
    fs::create_dir_all(&output_dir).map_err(CliError::io(&output_dir))?;
    let mut echo = config.clone();
    echo.output.dir = Some(output_dir.clone());
    let echo_text = echo.to_toml();
    write(&output_dir.join(CONFIG_ECHO), &echo_text)?;

    let phases = source.phases();
    let restored = match &options.resume_from {
        Some(dir) => restore(config, dir)?,
        None => Restored {
            start: 0,
            states: Vec::new(),
            histories: vec![AccuracyHistory::new(); config.learners.len()],
        },
    };
    if restored.start > phases {
        return Err(CliError::Resume(format!("checkpoint phase {} beyond {phases}-phase schedule", restored.start)));
    }
    let mut states = restored.states;
    let mut histories = restored.histories;

    for t in restored.start..phases {
        source.enter_phase(t);
        let train = source.train(t)?;
        states = config
            .learners
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                let next = if t == 0 {
                    LearnerState::fit_base(kind, &train, &config.engine)
                } else {
                    states[i].absorb(&train)
                };
                next.map_err(|source| CliError::Learner {
                    learner: kind.name(),
                    phase: t + 1,
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        drop(train);

        let mut concept_rows = vec![Vec::with_capacity(t + 1); states.len()];
        let mut class_rows = vec![Vec::with_capacity(t + 1); states.len()];
        for k in 0..=t {
            let test = source.test(k)?;
            for (i, state) in states.iter().enumerate() {
                let (concept, class) = evaluate(state.head(), &test).map_err(|source| CliError::Learner {
                    learner: config.learners[i].name(),
                    phase: t + 1,
                    source,
                })?;
                concept_rows[i].push(concept);
                class_rows[i].push(class);
            }
        }
        for ((h, c), y) in histories.iter_mut().zip(concept_rows).zip(class_rows) {
            h.push(c, y)?;
        }

        let dir = checkpoint_dir(&output_dir, t + 1);
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let digests = config
            .learners
            .iter()
            .zip(&states)
            .map(|(&kind, state)| state.save(&checkpoint_file(&dir, kind)).map(|d| d.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let labelled: Vec<_> = config.learners.iter().copied().zip(histories.iter().cloned()).collect();
        write(&dir.join(HISTORY_FILE), &accuracy_table(&labelled, ','))?;
        write(&dir.join(CONFIG_ECHO), &echo_text)?;
        let progress = Progress {
            completed_phases: t + 1,
            learners: config.learners.clone(),
            digests,
        };
        write(&dir.join(PROGRESS_FILE), &toml::to_string(&progress).expect("progress serializes"))?;
    }

    let histories: Vec<(LearnerKind, AccuracyHistory)> = config.learners.iter().copied().zip(histories).collect();
    let mut report_files = Vec::new();
    for format in &config.output.formats {
        let delimiter = format.delimiter();
        for (stem, text) in [
            (METRICS_STEM, metrics_table(&histories, delimiter)?),
            (ACCURACY_STEM, accuracy_table(&histories, delimiter)),
        ] {
            let path = output_dir.join(format!("{stem}.{}", format.extension()));
            write(&path, &text)?;
            report_files.push(path);
        }
    }
    let final_metrics = if phases == 0 {
        Vec::new()
    } else {
        histories
            .iter()
            .map(|(k, h)| MetricsRecord::from_history(h, phases).map(|r| (*k, r)))
            .collect::<Result<_, _>>()?
    };
    Ok(RunSummary {
        output_dir,
        phases,
        histories,
        final_metrics,
        report_files,
    })
}
