//! Average accuracy and average forgetting over a lower-triangular accuracy
//! history. Tasks and phases are 1-based in the public functions: `t` is the
//! number of phases completed.

use thiserror::Error;

use crate::linalg::DenseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("history holds {available} phases, {requested} requested")]
    IncompleteHistory { requested: usize, available: usize },
    #[error("phase index {0} is out of range for this metric")]
    InvalidPhase(usize),
    #[error("accuracy row for phase {phase} must have {expected} entries, got {found}")]
    RowLength { phase: usize, expected: usize, found: usize },
    #[error("accuracy {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("prediction and label shapes differ")]
    ShapeMismatch,
}

/// `concept[j][k]` / `class[j][k]`: accuracy of the model after phase `j`
/// on task `k`'s test set, for `k <= j` (both 0-based).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyHistory {
    concept: Vec<Vec<f64>>,
    class: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Concept,
    Class,
}

impl AccuracyHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn phases(&self) -> usize {
        self.concept.len()
    }

    /// Appends the evaluation row of the next phase.
    pub fn push(&mut self, concept: Vec<f64>, class: Vec<f64>) -> Result<(), MetricsError> {
        let phase = self.phases();
        for row in [&concept, &class] {
            if row.len() != phase + 1 {
                return Err(MetricsError::RowLength {
                    phase,
                    expected: phase + 1,
                    found: row.len(),
                });
            }
            if let Some(&bad) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(MetricsError::OutOfRange(bad));
            }
        }
        self.concept.push(concept);
        self.class.push(class);
        Ok(())
    }

    pub fn rows(&self, target: Target) -> &[Vec<f64>] {
        match target {
            Target::Concept => &self.concept,
            Target::Class => &self.class,
        }
    }

    fn require(&self, t: usize) -> Result<(), MetricsError> {
        if t > self.phases() {
            return Err(MetricsError::IncompleteHistory {
                requested: t,
                available: self.phases(),
            });
        }
        Ok(())
    }

    /// Mean accuracy over tasks `1..=t` of the model after phase `t`.
    pub fn average_accuracy(&self, target: Target, t: usize) -> Result<f64, MetricsError> {
        if t == 0 {
            return Err(MetricsError::InvalidPhase(t));
        }
        self.require(t)?;
        let row = &self.rows(target)[t - 1];
        Ok(row.iter().sum::<f64>() / t as f64)
    }

    /// Mean drop, over tasks `1..t`, from a task's best accuracy during
    /// phases `k..t-1` to its accuracy after phase `t`. Negative when
    /// accuracy improved.
    pub fn forgetting_rate(&self, target: Target, t: usize) -> Result<f64, MetricsError> {
        if t < 2 {
            return Err(MetricsError::InvalidPhase(t));
        }
        self.require(t)?;
        let rows = self.rows(target);
        let current = &rows[t - 1];
        let total: f64 = (0..t - 1)
            .map(|k| {
                let best = rows[k..t - 1].iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
                best - current[k]
            })
            .sum();
        Ok(total / (t - 1) as f64)
    }

    pub fn avg_concept_accuracy(&self, t: usize) -> Result<f64, MetricsError> {
        self.average_accuracy(Target::Concept, t)
    }

    pub fn avg_class_accuracy(&self, t: usize) -> Result<f64, MetricsError> {
        self.average_accuracy(Target::Class, t)
    }

    pub fn concept_forget_rate(&self, t: usize) -> Result<f64, MetricsError> {
        self.forgetting_rate(Target::Concept, t)
    }

    pub fn class_forget_rate(&self, t: usize) -> Result<f64, MetricsError> {
        self.forgetting_rate(Target::Class, t)
    }
}

/// Mean per-concept accuracy: the fraction of matching 0/1 entries.
pub fn concept_accuracy(decisions: &DenseMatrix, labels: &DenseMatrix) -> Result<f64, MetricsError> {
    if decisions.shape() != labels.shape() {
        return Err(MetricsError::ShapeMismatch);
    }
    let total = decisions.as_slice().len();
    if total == 0 {
        return Ok(1.0);
    }
    let hits = decisions.as_slice().iter().zip(labels.as_slice()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / total as f64)
}

pub fn class_accuracy<T: PartialEq>(predicted: &[T], truth: &[T]) -> Result<f64, MetricsError> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::ShapeMismatch);
    }
    if truth.is_empty() {
        return Ok(1.0);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Metric names in report order.
pub const METRIC_NAMES: [&str; 4] = [
    "avg_concept_accuracy",
    "avg_class_accuracy",
    "concept_forget_rate",
    "class_forget_rate",
];

/// The four summary metrics after phase `t`. Forgetting is reported as 0
/// for `t = 1`, where no earlier task exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub phase: usize,
    pub avg_concept_accuracy: f64,
    pub avg_class_accuracy: f64,
    pub concept_forget_rate: f64,
    pub class_forget_rate: f64,
}

impl MetricsRecord {
    pub fn from_history(h: &AccuracyHistory, t: usize) -> Result<Self, MetricsError> {
        let forget = |target| if t >= 2 { h.forgetting_rate(target, t) } else { Ok(0.0) };
        Ok(Self {
            phase: t,
            avg_concept_accuracy: h.avg_concept_accuracy(t)?,
            avg_class_accuracy: h.avg_class_accuracy(t)?,
            concept_forget_rate: forget(Target::Concept)?,
            class_forget_rate: forget(Target::Class)?,
        })
    }

    pub fn values(&self) -> [(&'static str, f64); 4] {
        [
            (METRIC_NAMES[0], self.avg_concept_accuracy),
            (METRIC_NAMES[1], self.avg_class_accuracy),
            (METRIC_NAMES[2], self.concept_forget_rate),
            (METRIC_NAMES[3], self.class_forget_rate),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn history(rows: &[&[f64]]) -> AccuracyHistory {
        let mut h = AccuracyHistory::new();
        for r in rows {
            h.push(r.to_vec(), r.to_vec()).unwrap();
        }
        h
    }

    #[test]
    fn single_task_average() {
        let h = history(&[&[0.9]]);
        assert_eq!(h.avg_concept_accuracy(1).unwrap(), 0.9);
    }

    #[test]
    fn two_task_average() {
        let h = history(&[&[1.0], &[1.0, 0.5]]);
        assert_eq!(h.avg_class_accuracy(2).unwrap(), 0.75);
    }

    #[test]
    fn constant_history_forgets_nothing() {
        let h = history(&[&[0.7], &[0.7, 0.4], &[0.7, 0.4, 0.9]]);
        assert_eq!(h.class_forget_rate(2).unwrap(), 0.0);
        assert_eq!(h.class_forget_rate(3).unwrap(), 0.0);
    }

    #[test]
    fn single_term_forgetting() {
        let h = history(&[&[0.8], &[0.6, 0.9]]);
        assert!((h.concept_forget_rate(2).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn improvement_gives_negative_forgetting() {
        let h = history(&[&[0.5], &[0.6, 0.9]]);
        assert!(h.class_forget_rate(2).unwrap() < 0.0);
    }

    #[test]
    fn errors_on_missing_phases() {
        let h = history(&[&[0.5]]);
        assert_eq!(
            h.avg_class_accuracy(2),
            Err(MetricsError::IncompleteHistory { requested: 2, available: 1 })
        );
        assert_eq!(h.class_forget_rate(1), Err(MetricsError::InvalidPhase(1)));
        assert_eq!(h.avg_class_accuracy(0), Err(MetricsError::InvalidPhase(0)));
        assert!(matches!(h.class_forget_rate(2), Err(MetricsError::IncompleteHistory { .. })));
    }

    #[test]
    fn push_validates_shape_and_range() {
        let mut h = AccuracyHistory::new();
        assert!(matches!(h.push(vec![0.5, 0.5], vec![0.5]), Err(MetricsError::RowLength { .. })));
        assert_eq!(h.push(vec![1.5], vec![0.5]), Err(MetricsError::OutOfRange(1.5)));
    }

    #[test]
    fn first_phase_record_reports_zero_forgetting() {
        let h = history(&[&[0.9]]);
        let rec = MetricsRecord::from_history(&h, 1).unwrap();
        assert_eq!(rec.class_forget_rate, 0.0);
        assert_eq!(rec.avg_class_accuracy, 0.9);
    }

    #[test]
    fn accuracies() {
        let d = DenseMatrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]);
        let l = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        assert_eq!(concept_accuracy(&d, &l).unwrap(), 0.75);
        assert_eq!(class_accuracy(&[1, 2, 3], &[1, 2, 4]).unwrap(), 2.0 / 3.0);
        assert!(class_accuracy(&[1], &[1, 2]).is_err());
    }

    proptest! {
        #[test]
        fn average_is_permutation_invariant(mut row in prop::collection::vec(0.0f64..=1.0, 1..8)) {
            let t = row.len();
            let mut h = AccuracyHistory::new();
            for j in 0..t - 1 {
                h.push(vec![0.5; j + 1], vec![0.5; j + 1]).unwrap();
            }
            let mut h2 = h.clone();
            h.push(row.clone(), row.clone()).unwrap();
            row.reverse();
            h2.push(row.clone(), row).unwrap();
            let a = h.avg_concept_accuracy(t).unwrap();
            let b = h2.avg_concept_accuracy(t).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn monotone_decay_never_gives_negative_terms(
            start in prop::collection::vec(0.5f64..=1.0, 4),
            drops in prop::collection::vec(0.0f64..0.1, 4),
        ) {
            // acc[j][k] = start[k] - drops[k]*(j-k): non-increasing per task.
            let mut h = AccuracyHistory::new();
            for j in 0..4 {
                let row: Vec<f64> = (0..=j).map(|k| start[k] - drops[k] * (j - k) as f64).collect();
                h.push(row.clone(), row).unwrap();
            }
            for t in 2..=4 {
                prop_assert!(h.class_forget_rate(t).unwrap() >= 0.0);
            }
        }
    }
}
