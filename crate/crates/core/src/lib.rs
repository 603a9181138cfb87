//! Gradient-free continual learning for concept bottleneck heads.
//!
//! Concept and class layers are fitted by closed-form ridge regression and
//! updated phase by phase with exact recursive (Woodbury) updates, so a model
//! trained incrementally matches one trained on all phases at once.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod engine;
pub mod expansion;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod persistence;

pub use baseline::BaselineState;
pub use engine::{ClassId, ConceptHead, ConceptId, ContinualLearner, EngineConfig, EngineError, ModelState, PhaseBatch, Prediction};
pub use expansion::{ExpansionLayer, GrowthRecord};
pub use harness::{CicilSchedule, LabeledTable, SplitConfig, SyntheticSpec};
pub use linalg::{DenseMatrix, LinalgError};
pub use metrics::{AccuracyHistory, MetricsRecord};
