use std::path::PathBuf;

use concil::harness::HarnessError;
use concil::metrics::MetricsError;
use concil::persistence::PersistenceError;
use concil::EngineError;
use serde_json::json;
use thiserror::Error;

use crate::config::Diagnostic;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration ({} problem(s))", .0.len())]
    InvalidConfig(Vec<Diagnostic>),
    #[error("no output directory: set output.dir or pass --output-dir")]
    NoOutputDir,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{learner} failed in phase {phase}: {source}")]
    Learner {
        learner: &'static str,
        phase: usize,
        #[source]
        source: EngineError,
    },
    #[error("resume failed: {0}")]
    Resume(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::InvalidConfig(_) => "invalid_config",
            CliError::NoOutputDir => "no_output_dir",
            CliError::Io { .. } => "io",
            CliError::Learner { .. } => "learner",
            CliError::Resume(_) => "resume",
            CliError::Harness(_) => "harness",
            CliError::Persistence(_) => "persistence",
            CliError::Metrics(_) => "metrics",
        }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidConfig(_) | CliError::NoOutputDir => 2,
            _ => 1,
        }
    }

    /// Machine-readable error report.
    pub fn report(&self) -> serde_json::Value {
        let mut report = json!({
            "status": "error",
            "kind": self.kind(),
            "message": self.to_string(),
        });
        match self {
            CliError::InvalidConfig(diags) => report["diagnostics"] = json!(diags),
            CliError::Learner { learner, phase, .. } => {
                report["learner"] = json!(learner);
                report["phase"] = json!(phase);
            }
            _ => {}
        }
        report
    }
}
