//! The analytic concept-bottleneck learner.
//!
//! A head maps raw backbone features through a frozen expansion to concept
//! scores (`W_c`), expands those scores again and maps them to class scores
//! (`W_y`). [`ModelState`] additionally carries the two inverse correlation
//! matrices that let every later phase be folded in exactly, without access
//! to earlier data.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expansion::{derive_seed, ExpansionError, ExpansionLayer};
use crate::linalg::{inverse_correlation, ridge_fit, woodbury_update, DenseMatrix, LinalgError, RidgeProblem};

pub type ConceptId = u32;
pub type ClassId = u32;

/// Concept scores strictly above this are decided as present.
pub const CONCEPT_THRESHOLD: f64 = 0.5;

/// Symmetry tolerance for stored inverse correlation matrices.
pub const R_SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("class {0} was already introduced in an earlier phase")]
    DisjointClassViolation(ClassId),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("cannot refit from an empty batch")]
    EmptyBatch,
    #[error("model state violates invariant: {0}")]
    Invariant(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
}

/// Hyperparameters of the learner. Missing fields take the published
/// defaults (`λ₁ = 500`, `λ₂ = 1`, 25000-wide expansions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Width of the expanded backbone features.
    pub backbone_dim: usize,
    /// Base width of the expanded concept space.
    pub concept_dim: usize,
    pub backbone_seed: u64,
    pub concept_seed: u64,
    /// Standard deviation of the backbone expansion; `1/√d_z` when unset.
    pub backbone_scale: Option<f64>,
    /// Standard deviation of the concept expansion; `1/√L_base` when unset.
    pub concept_scale: Option<f64>,
    /// Expanded-concept columns added per phase that introduces concepts.
    /// When unset: `ceil(concept_dim · L_new / L_base)`.
    pub growth_out_per_phase: Option<usize>,
}

pub const DEFAULT_LAMBDA1: f64 = 500.0;
pub const DEFAULT_LAMBDA2: f64 = 1.0;
pub const DEFAULT_EXPANSION_DIM: usize = 25_000;

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            backbone_dim: DEFAULT_EXPANSION_DIM,
            concept_dim: DEFAULT_EXPANSION_DIM,
            backbone_seed: 0,
            concept_seed: 1,
            backbone_scale: None,
            concept_scale: None,
            growth_out_per_phase: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(EngineError::Config(format!("{name} must be a positive finite number, got {v}")));
            }
        }
        if self.backbone_dim == 0 || self.concept_dim == 0 {
            return Err(EngineError::Config("expansion dimensions must be >= 1".into()));
        }
        for (name, s) in [("backbone_scale", self.backbone_scale), ("concept_scale", self.concept_scale)] {
            if let Some(s) = s {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(EngineError::Config(format!("{name} must be positive, got {s}")));
                }
            }
        }
        Ok(())
    }
}

/// One phase of training (or test) data: raw features with concept labels
/// over `concept_ids` and one-hot class labels over `class_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBatch {
    features: DenseMatrix,
    concepts: DenseMatrix,
    concept_ids: Vec<ConceptId>,
    classes: DenseMatrix,
    class_ids: Vec<ClassId>,
}

fn check_unique<T: Copy + Eq + std::hash::Hash + std::fmt::Display>(ids: &[T], what: &str) -> Result<(), EngineError> {
    let mut seen = HashSet::new();
    for &id in ids {
        if !seen.insert(id) {
            return Err(EngineError::InvalidBatch(format!("duplicate {what} id {id}")));
        }
    }
    Ok(())
}

impl PhaseBatch {
    pub fn new(
        features: DenseMatrix,
        concepts: DenseMatrix,
        concept_ids: Vec<ConceptId>,
        classes: DenseMatrix,
        class_ids: Vec<ClassId>,
    ) -> Result<Self, EngineError> {
        let n = features.rows();
        if concepts.rows() != n || classes.rows() != n {
            return Err(EngineError::InvalidBatch(format!(
                "row counts disagree: features {n}, concepts {}, classes {}",
                concepts.rows(),
                classes.rows()
            )));
        }
        if concepts.cols() != concept_ids.len() || classes.cols() != class_ids.len() {
            return Err(EngineError::InvalidBatch("label columns do not match id lists".into()));
        }
        check_unique(&concept_ids, "concept")?;
        check_unique(&class_ids, "class")?;
        if !features.is_finite() {
            return Err(EngineError::InvalidBatch("non-finite feature value".into()));
        }
        for (idx, &v) in concepts.as_slice().iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                let (r, c) = (idx / concepts.cols(), idx % concepts.cols());
                return Err(EngineError::InvalidBatch(format!("concept label {v} at ({r}, {c}) is not 0/1")));
            }
        }
        for i in 0..n {
            let row = classes.row(i);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(EngineError::InvalidBatch(format!("class row {i} is not one-hot")));
            }
        }
        Ok(Self {
            features,
            concepts,
            concept_ids,
            classes,
            class_ids,
        })
    }

    /// Builds the one-hot class matrix from per-row labels.
    pub fn from_labels(
        features: DenseMatrix,
        concepts: DenseMatrix,
        concept_ids: Vec<ConceptId>,
        labels: &[ClassId],
        class_ids: Vec<ClassId>,
    ) -> Result<Self, EngineError> {
        let mut classes = DenseMatrix::zeros(labels.len(), class_ids.len());
        for (i, label) in labels.iter().enumerate() {
            let col = class_ids
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| EngineError::InvalidBatch(format!("label {label} not among batch classes")))?;
            classes[(i, col)] = 1.0;
        }
        Self::new(features, concepts, concept_ids, classes, class_ids)
    }

    /// A zero-row batch with the given feature width and id lists.
    pub fn empty(feature_dim: usize, concept_ids: Vec<ConceptId>, class_ids: Vec<ClassId>) -> Result<Self, EngineError> {
        Self::new(
            DenseMatrix::zeros(0, feature_dim),
            DenseMatrix::zeros(0, concept_ids.len()),
            concept_ids,
            DenseMatrix::zeros(0, class_ids.len()),
            class_ids,
        )
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn concepts(&self) -> &DenseMatrix {
        &self.concepts
    }

    pub fn concept_ids(&self) -> &[ConceptId] {
        &self.concept_ids
    }

    pub fn classes(&self) -> &DenseMatrix {
        &self.classes
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    /// Class id of every row.
    pub fn labels(&self) -> Vec<ClassId> {
        (0..self.len())
            .map(|i| {
                let col = self.classes.row(i).iter().position(|&v| v == 1.0).expect("one-hot row");
                self.class_ids[col]
            })
            .collect()
    }
}

/// Output of [`ConceptHead::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub concept_scores: DenseMatrix,
    /// 1.0 where the score exceeds [`CONCEPT_THRESHOLD`], else 0.0.
    pub concept_decisions: DenseMatrix,
    pub class_scores: DenseMatrix,
    /// Column index of the highest class score; ties go to the lowest index.
    pub class_decisions: Vec<usize>,
    /// `class_decisions` mapped to class ids.
    pub predicted_classes: Vec<ClassId>,
}

/// Structure shared by every learner: the two expansions, the two weight
/// matrices and the id ledgers mapping columns to global ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptHead {
    pub(crate) config: EngineConfig,
    pub(crate) backbone_expansion: ExpansionLayer,
    pub(crate) concept_expansion: ExpansionLayer,
    pub(crate) w_c: DenseMatrix,
    pub(crate) w_y: DenseMatrix,
    pub(crate) concept_ids: Vec<ConceptId>,
    pub(crate) class_ids: Vec<ClassId>,
    pub(crate) phase: u64,
}

/// A batch re-indexed against a head's id ledgers.
pub(crate) struct AlignedBatch {
    /// Concept targets over the full, extended concept ledger.
    pub concepts: DenseMatrix,
    /// Class targets over the full, extended class ledger.
    pub classes: DenseMatrix,
    pub new_concepts: Vec<ConceptId>,
    pub new_classes: Vec<ClassId>,
}

impl ConceptHead {
    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn backbone_expansion(&self) -> &ExpansionLayer {
        &self.backbone_expansion
    }

    pub fn concept_expansion(&self) -> &ExpansionLayer {
        &self.concept_expansion
    }

    pub fn concept_weights(&self) -> &DenseMatrix {
        &self.w_c
    }

    pub fn class_weights(&self) -> &DenseMatrix {
        &self.w_y
    }

    pub fn concept_ids(&self) -> &[ConceptId] {
        &self.concept_ids
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn phase(&self) -> u64 {
        self.phase
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone_expansion.in_dim()
    }

    pub fn lambda1(&self) -> f64 {
        self.config.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.config.lambda2
    }

    /// Fits both layers of a fresh head on the base batch. Also returns the
    /// expanded features and expanded concepts it regressed on.
    pub(crate) fn fit_base(
        batch: &PhaseBatch,
        config: &EngineConfig,
    ) -> Result<(Self, DenseMatrix, DenseMatrix), EngineError> {
        config.validate()?;
        let d_z = batch.features.cols();
        if d_z == 0 {
            return Err(EngineError::Config("feature dimension must be >= 1".into()));
        }
        if batch.concept_ids.is_empty() || batch.class_ids.is_empty() {
            return Err(EngineError::InvalidBatch("base batch needs at least one concept and one class".into()));
        }
        let backbone = ExpansionLayer::new(
            d_z,
            config.backbone_dim,
            config.backbone_seed,
            config.backbone_scale.unwrap_or_else(|| ExpansionLayer::default_scale(d_z)),
        )?;
        let l0 = batch.concept_ids.len();
        let concept_expansion = ExpansionLayer::new(
            l0,
            config.concept_dim,
            config.concept_seed,
            config.concept_scale.unwrap_or_else(|| ExpansionLayer::default_scale(l0)),
        )?;
        let z_star = backbone.expand(&batch.features)?;
        let w_c = ridge_fit(&RidgeProblem::new(&z_star, &batch.concepts, config.lambda1)?)?;
        let c_hat = z_star.matmul(&w_c)?;
        let c_star = concept_expansion.expand(&c_hat)?;
        let w_y = ridge_fit(&RidgeProblem::new(&c_star, &batch.classes, config.lambda2)?)?;
        let head = Self {
            config: config.clone(),
            backbone_expansion: backbone,
            concept_expansion,
            w_c,
            w_y,
            concept_ids: batch.concept_ids.clone(),
            class_ids: batch.class_ids.clone(),
            phase: 0,
        };
        Ok((head, z_star, c_star))
    }

    /// Re-indexes `batch` against this head's ledgers. Absent concept columns
    /// get target 0; old class columns are 0 by disjointness.
    pub(crate) fn align(&self, batch: &PhaseBatch) -> Result<AlignedBatch, EngineError> {
        if batch.features.cols() != self.feature_dim() {
            return Err(LinalgError::DimensionMismatch {
                op: "phase batch",
                expected: format!("{} feature columns", self.feature_dim()),
                found: format!("{}", batch.features.cols()),
            }
            .into());
        }
        if let Some(&dup) = batch.class_ids.iter().find(|id| self.class_ids.contains(id)) {
            return Err(EngineError::DisjointClassViolation(dup));
        }
        let new_concepts: Vec<ConceptId> = batch
            .concept_ids
            .iter()
            .copied()
            .filter(|id| !self.concept_ids.contains(id))
            .collect();
        let total_concepts = self.concept_ids.len() + new_concepts.len();
        let column_of = |id: ConceptId| -> usize {
            self.concept_ids
                .iter()
                .position(|&c| c == id)
                .unwrap_or_else(|| self.concept_ids.len() + new_concepts.iter().position(|&c| c == id).unwrap())
        };
        let targets: Vec<usize> = batch.concept_ids.iter().map(|&id| column_of(id)).collect();
        let n = batch.len();
        let mut concepts = DenseMatrix::zeros(n, total_concepts);
        for i in 0..n {
            for (j, &col) in targets.iter().enumerate() {
                concepts[(i, col)] = batch.concepts[(i, j)];
            }
        }
        let old_classes = self.class_ids.len();
        let mut classes = DenseMatrix::zeros(n, old_classes + batch.class_ids.len());
        for i in 0..n {
            classes.row_mut(i)[old_classes..].copy_from_slice(batch.classes.row(i));
        }
        Ok(AlignedBatch {
            concepts,
            classes,
            new_concepts,
            new_classes: batch.class_ids.clone(),
        })
    }

    /// Expanded-concept columns to add when `new_concepts` concepts arrive.
    pub(crate) fn growth_out(&self, new_concepts: usize) -> usize {
        if new_concepts == 0 {
            return 0;
        }
        self.config.growth_out_per_phase.unwrap_or_else(|| {
            let (base_in, base_out) = self.concept_expansion.base_dims();
            (base_out * new_concepts).div_ceil(base_in)
        })
    }

    /// Extends the ledgers and the concept expansion for the next phase.
    /// Returns the number of expanded-concept columns added.
    pub(crate) fn extend_structure(&mut self, aligned: &AlignedBatch) -> usize {
        let next_phase = self.phase + 1;
        let added_in = aligned.new_concepts.len();
        let added_out = self.growth_out(added_in);
        if added_in > 0 {
            let sub_seed = derive_seed(self.config.concept_seed, next_phase);
            self.concept_expansion = self.concept_expansion.grow(next_phase, added_in, added_out, sub_seed);
        }
        self.concept_ids.extend_from_slice(&aligned.new_concepts);
        self.class_ids.extend_from_slice(&aligned.new_classes);
        added_out
    }

    pub fn expand_features(&self, features: &DenseMatrix) -> Result<DenseMatrix, EngineError> {
        Ok(self.backbone_expansion.expand(features)?)
    }

    /// `expand(expand(features)·W_c)`: the classifier's input for `features`.
    pub fn expanded_concepts(&self, features: &DenseMatrix) -> Result<DenseMatrix, EngineError> {
        let c_hat = self.expand_features(features)?.matmul(&self.w_c)?;
        Ok(self.concept_expansion.expand(&c_hat)?)
    }

    pub fn predict(&self, features: &DenseMatrix) -> Result<Prediction, EngineError> {
        if features.cols() != self.feature_dim() {
            return Err(LinalgError::DimensionMismatch {
                op: "predict",
                expected: format!("{} feature columns", self.feature_dim()),
                found: format!("{}", features.cols()),
            }
            .into());
        }
        let concept_scores = self.expand_features(features)?.matmul(&self.w_c)?;
        let class_scores = self.concept_expansion.expand(&concept_scores)?.matmul(&self.w_y)?;
        let concept_decisions = concept_scores.map(|v| if v > CONCEPT_THRESHOLD { 1.0 } else { 0.0 });
        let class_decisions: Vec<usize> = (0..class_scores.rows()).map(|i| argmax(class_scores.row(i))).collect();
        let predicted_classes = class_decisions.iter().map(|&j| self.class_ids[j]).collect();
        Ok(Prediction {
            concept_scores,
            concept_decisions,
            class_scores,
            class_decisions,
            predicted_classes,
        })
    }

    pub(crate) fn check_structure(&self) -> Result<(), EngineError> {
        let fail = |m: String| Err(EngineError::Invariant(m));
        if self.w_c.cols() != self.concept_ids.len() {
            return fail(format!("W_c has {} cols for {} concepts", self.w_c.cols(), self.concept_ids.len()));
        }
        if self.w_y.cols() != self.class_ids.len() {
            return fail(format!("W_y has {} cols for {} classes", self.w_y.cols(), self.class_ids.len()));
        }
        if self.w_c.rows() != self.backbone_expansion.out_dim() {
            return fail("W_c rows differ from backbone expansion width".into());
        }
        if self.w_y.rows() != self.concept_expansion.out_dim() {
            return fail("W_y rows differ from concept expansion width".into());
        }
        if self.concept_expansion.in_dim() != self.concept_ids.len() {
            return fail("concept expansion input width differs from concept count".into());
        }
        if !self.w_c.is_finite() || !self.w_y.is_finite() {
            return fail("non-finite weights".into());
        }
        Ok(())
    }
}

/// Index of the largest value; the first one wins ties. NaN never wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// CONCIL learner state: a head plus the inverse correlation matrices of
/// both regression layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub(crate) head: ConceptHead,
    pub(crate) r_c: DenseMatrix,
    pub(crate) r_y: DenseMatrix,
}

impl ModelState {
    /// Closed-form fit of both layers on the base phase.
    pub fn base_fit(batch: &PhaseBatch, config: &EngineConfig) -> Result<Self, EngineError> {
        let (head, z_star, c_star) = ConceptHead::fit_base(batch, config)?;
        let r_c = inverse_correlation(&z_star, config.lambda1)?;
        let r_y = inverse_correlation(&c_star, config.lambda2)?;
        Ok(Self { head, r_c, r_y })
    }

    /// Folds one more phase into the model using only that phase's data.
    pub fn phase_update(&self, batch: &PhaseBatch) -> Result<Self, EngineError> {
        let mut head = self.head.clone();
        let aligned = head.align(batch)?;

        let z_star = head.expand_features(&batch.features)?;
        let r_c = woodbury_update(&self.r_c, &z_star)?;
        head.w_c = rls_step(&head.w_c.pad_cols(aligned.new_concepts.len()), &r_c, &z_star, &aligned.concepts)?;

        let added_out = head.extend_structure(&aligned);
        let inv_l2 = 1.0 / head.config.lambda2;
        let r_y_ext = self.r_y.block_diag(&DenseMatrix::identity(added_out).scale(inv_l2));
        let w_y_ext = head.w_y.resized(head.w_y.rows() + added_out, head.class_ids.len());

        let c_hat = z_star.matmul(&head.w_c)?;
        let c_star = head.concept_expansion.expand(&c_hat)?;
        let r_y = woodbury_update(&r_y_ext, &c_star)?;
        head.w_y = rls_step(&w_y_ext, &r_y, &c_star, &aligned.classes)?;
        head.phase += 1;

        Ok(Self { head, r_c, r_y })
    }

    pub fn head(&self) -> &ConceptHead {
        &self.head
    }

    pub fn concept_correlation(&self) -> &DenseMatrix {
        &self.r_c
    }

    pub fn class_correlation(&self) -> &DenseMatrix {
        &self.r_y
    }

    pub fn phase(&self) -> u64 {
        self.head.phase
    }

    pub fn predict(&self, features: &DenseMatrix) -> Result<Prediction, EngineError> {
        self.head.predict(features)
    }

    pub(crate) fn from_parts(head: ConceptHead, r_c: DenseMatrix, r_y: DenseMatrix) -> Result<Self, EngineError> {
        let s = Self { head, r_c, r_y };
        s.check_invariants()?;
        Ok(s)
    }

    /// Verifies the dimensional and symmetry invariants.
    pub fn check_invariants(&self) -> Result<(), EngineError> {
        self.head.check_structure()?;
        let dz = self.head.backbone_expansion.out_dim();
        let dc = self.head.concept_expansion.out_dim();
        if self.r_c.shape() != (dz, dz) || self.r_y.shape() != (dc, dc) {
            return Err(EngineError::Invariant("inverse correlation shape mismatch".into()));
        }
        for (name, r) in [("R_c", &self.r_c), ("R_y", &self.r_y)] {
            if r.asymmetry() > R_SYMMETRY_TOL {
                return Err(EngineError::Invariant(format!("{name} is not symmetric")));
            }
            if (0..r.rows()).any(|i| !(r[(i, i)] > 0.0)) {
                return Err(EngineError::Invariant(format!("{name} has a non-positive diagonal")));
            }
        }
        Ok(())
    }
}

/// `W + R Zᵀ (T − Z W)`: the recursive least-squares step, with `R` the
/// already-updated inverse correlation matrix.
fn rls_step(
    weights: &DenseMatrix,
    r: &DenseMatrix,
    inputs: &DenseMatrix,
    targets: &DenseMatrix,
) -> Result<DenseMatrix, LinalgError> {
    if inputs.rows() == 0 {
        return Ok(weights.clone());
    }
    let residual = targets.sub(&inputs.matmul(weights)?)?;
    let gain = r.matmul(&inputs.t_matmul(&residual)?)?;
    weights.add(&gain)
}

/// Common surface of the CONCIL learner and the refit-only baseline.
pub trait ContinualLearner: Sized {
    const NAME: &'static str;

    fn fit_base(batch: &PhaseBatch, config: &EngineConfig) -> Result<Self, EngineError>;

    fn absorb(&self, batch: &PhaseBatch) -> Result<Self, EngineError>;

    fn head(&self) -> &ConceptHead;

    fn predict(&self, features: &DenseMatrix) -> Result<Prediction, EngineError> {
        self.head().predict(features)
    }
}

impl ContinualLearner for ModelState {
    const NAME: &'static str = "concil";

    fn fit_base(batch: &PhaseBatch, config: &EngineConfig) -> Result<Self, EngineError> {
        Self::base_fit(batch, config)
    }

    fn absorb(&self, batch: &PhaseBatch) -> Result<Self, EngineError> {
        self.phase_update(batch)
    }

    fn head(&self) -> &ConceptHead {
        &self.head
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::oracle;

    fn tiny_config() -> EngineConfig {
        EngineConfig {
            lambda1: 0.5,
            lambda2: 0.25,
            backbone_dim: 8,
            concept_dim: 6,
            backbone_seed: 3,
            concept_seed: 4,
            ..EngineConfig::default()
        }
    }

    fn tiny_batch() -> PhaseBatch {
        let features = DenseMatrix::from_rows(&[
            [1.0, 0.2, -0.3],
            [0.9, 0.1, -0.2],
            [-0.5, 1.1, 0.4],
            [-0.4, 0.9, 0.6],
            [0.3, -0.8, 1.0],
            [0.2, -1.0, 0.9],
        ]);
        let concepts = DenseMatrix::from_rows(&[
            [1.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.0, 1.0],
            [1.0, 1.0],
            [1.0, 1.0],
        ]);
        PhaseBatch::from_labels(features, concepts, vec![10, 11], &[0, 0, 1, 1, 0, 1], vec![0, 1]).unwrap()
    }

    #[test]
    fn defaults_follow_published_values() {
        let cfg: EngineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.lambda1, 500.0);
        assert_eq!(cfg.lambda2, 1.0);
        assert_eq!(cfg.backbone_dim, 25_000);
        assert_eq!(cfg.concept_dim, 25_000);
    }

    #[test]
    fn config_rejects_non_positive_values() {
        let mut cfg = tiny_config();
        cfg.lambda1 = 0.0;
        assert!(matches!(cfg.validate(), Err(EngineError::Config(_))));
        let mut cfg = tiny_config();
        cfg.concept_dim = 0;
        assert!(ModelState::base_fit(&tiny_batch(), &cfg).is_err());
    }

    #[test]
    fn zero_feature_sample_gives_zero_weights() {
        let batch = PhaseBatch::from_labels(
            DenseMatrix::zeros(1, 3),
            DenseMatrix::from_rows(&[[1.0, 0.0]]),
            vec![0, 1],
            &[0],
            vec![0],
        )
        .unwrap();
        let cfg = tiny_config();
        let state = ModelState::base_fit(&batch, &cfg).unwrap();
        assert_eq!(state.head().concept_weights().max_abs(), 0.0);
        let expected = DenseMatrix::identity(8).scale(1.0 / cfg.lambda1);
        assert!(state.concept_correlation().max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn base_fit_matches_normal_equations() {
        let batch = tiny_batch();
        let cfg = tiny_config();
        let state = ModelState::base_fit(&batch, &cfg).unwrap();
        let head = state.head();
        let z = head.expand_features(batch.features()).unwrap();
        let w_c = oracle::ridge(&z, batch.concepts(), cfg.lambda1);
        assert!(head.concept_weights().max_abs_diff(&w_c) < 1e-9);
        let c_star = head.concept_expansion().expand(&oracle::naive_matmul(&z, &w_c)).unwrap();
        let w_y = oracle::ridge(&c_star, batch.classes(), cfg.lambda2);
        assert!(head.class_weights().max_abs_diff(&w_y) < 1e-9);
        state.check_invariants().unwrap();
    }

    #[test]
    fn empty_phase_only_grows_structure() {
        let cfg = tiny_config();
        let state = ModelState::base_fit(&tiny_batch(), &cfg).unwrap();
        let empty = PhaseBatch::empty(3, vec![10, 12], vec![5]).unwrap();
        let next = state.phase_update(&empty).unwrap();
        assert_eq!(next.phase(), 1);
        assert_eq!(next.head().concept_ids(), &[10, 11, 12]);
        assert_eq!(next.head().class_ids(), &[0, 1, 5]);
        // Old blocks untouched, new blocks zero / prior.
        let w_c = next.head().concept_weights();
        assert_eq!(w_c.select_cols(&[0, 1]), *state.head().concept_weights());
        assert_eq!(w_c.select_cols(&[2]).max_abs(), 0.0);
        assert_eq!(next.concept_correlation(), state.concept_correlation());
        let added = next.head().concept_expansion().out_dim() - 6;
        assert_eq!(added, 3); // ceil(6 * 1 / 2)
        let r_y = next.class_correlation();
        let old: Vec<usize> = (0..6).collect();
        assert_eq!(r_y.select_rows(&old).select_cols(&old), *state.class_correlation());
        for i in 6..9 {
            assert_eq!(r_y[(i, i)], 1.0 / cfg.lambda2);
        }
        next.check_invariants().unwrap();
    }

    #[test]
    fn repeated_class_is_rejected() {
        let state = ModelState::base_fit(&tiny_batch(), &tiny_config()).unwrap();
        let batch = PhaseBatch::empty(3, vec![10], vec![7, 1]).unwrap();
        assert_eq!(state.phase_update(&batch).unwrap_err(), EngineError::DisjointClassViolation(1));
    }

    #[test]
    fn wrong_feature_width_is_rejected() {
        let state = ModelState::base_fit(&tiny_batch(), &tiny_config()).unwrap();
        let batch = PhaseBatch::empty(4, vec![10], vec![7]).unwrap();
        assert!(matches!(
            state.phase_update(&batch),
            Err(EngineError::Linalg(LinalgError::DimensionMismatch { .. }))
        ));
        assert!(state.predict(&DenseMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn batch_validation() {
        let f = DenseMatrix::zeros(2, 3);
        let bad_concepts = DenseMatrix::from_rows(&[[0.5], [1.0]]);
        let classes = DenseMatrix::from_rows(&[[1.0], [1.0]]);
        assert!(PhaseBatch::new(f.clone(), bad_concepts, vec![0], classes.clone(), vec![0]).is_err());
        let two_hot = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 0.0]]);
        let c = DenseMatrix::zeros(2, 1);
        assert!(PhaseBatch::new(f.clone(), c.clone(), vec![0], two_hot, vec![0, 1]).is_err());
        assert!(PhaseBatch::new(f, DenseMatrix::zeros(2, 2), vec![3, 3], classes, vec![0]).is_err());
    }

    #[test]
    fn zero_features_predict_lowest_class() {
        let state = ModelState::base_fit(&tiny_batch(), &tiny_config()).unwrap();
        let p = state.predict(&DenseMatrix::zeros(2, 3)).unwrap();
        assert_eq!(p.concept_scores.max_abs(), 0.0);
        assert_eq!(p.concept_decisions.max_abs(), 0.0);
        assert_eq!(p.class_decisions, vec![0, 0]);
        assert_eq!(p.predicted_classes, vec![0, 0]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert_eq!(argmax(&[f64::NAN, 1.0]), 0);
    }

    #[test]
    fn predict_is_deterministic() {
        let state = ModelState::base_fit(&tiny_batch(), &tiny_config()).unwrap();
        let x = tiny_batch().features().clone();
        assert_eq!(state.predict(&x).unwrap(), state.predict(&x).unwrap());
    }
}
