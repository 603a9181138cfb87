//! Refit-only comparison learner. Each phase re-solves both layers from the
//! current batch alone, keeping the same structural growth as
//! [`ModelState`](crate::ModelState) but no memory of earlier data.

use crate::engine::{ConceptHead, ContinualLearner, EngineConfig, EngineError, PhaseBatch};
use crate::linalg::{ridge_fit, RidgeProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub(crate) head: ConceptHead,
}

impl BaselineState {
    pub fn base_fit(batch: &PhaseBatch, config: &EngineConfig) -> Result<Self, EngineError> {
        let (head, _, _) = ConceptHead::fit_base(batch, config)?;
        Ok(Self { head })
    }

    /// Overwrites both layers with ridge fits on `batch` alone.
    pub fn phase_fit(&self, batch: &PhaseBatch) -> Result<Self, EngineError> {
        if batch.is_empty() {
            return Err(EngineError::EmptyBatch);
        }
        let mut head = self.head.clone();
        let aligned = head.align(batch)?;
        let z_star = head.expand_features(batch.features())?;
        head.w_c = ridge_fit(&RidgeProblem::new(&z_star, &aligned.concepts, head.config.lambda1)?)?;
        head.extend_structure(&aligned);
        let c_star = head.concept_expansion.expand(&z_star.matmul(&head.w_c)?)?;
        head.w_y = ridge_fit(&RidgeProblem::new(&c_star, &aligned.classes, head.config.lambda2)?)?;
        head.phase += 1;
        Ok(Self { head })
    }

    pub fn head(&self) -> &ConceptHead {
        &self.head
    }

    pub fn phase(&self) -> u64 {
        self.head.phase
    }

    pub(crate) fn from_head(head: ConceptHead) -> Result<Self, EngineError> {
        head.check_structure()?;
        Ok(Self { head })
    }
}

impl ContinualLearner for BaselineState {
    const NAME: &'static str = "baseline";

    fn fit_base(batch: &PhaseBatch, config: &EngineConfig) -> Result<Self, EngineError> {
        Self::base_fit(batch, config)
    }

    fn absorb(&self, batch: &PhaseBatch) -> Result<Self, EngineError> {
        self.phase_fit(batch)
    }

    fn head(&self) -> &ConceptHead {
        &self.head
    }
}
