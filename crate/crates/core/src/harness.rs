//! Builds concept- and class-incremental streams: phase schedules over a
//! labeled feature table, per-phase train/test slices, and a seeded
//! synthetic table generator for desk-scale runs.
//!
//! Class and concept ids are dense: classes are `0..class_count` and
//! concept ids are the concept column indices of the table.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ClassId, ConceptId, EngineError, PhaseBatch};
use crate::expansion::{derive_seed, GaussianStream};
use crate::linalg::DenseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid schedule: {0}")]
    Config(String),
    #[error("phase {phase} is out of range for a {phases}-phase schedule")]
    PhaseOutOfRange { phase: usize, phases: usize },
    #[error("invalid table: {0}")]
    Table(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Features with per-sample concept annotations and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTable {
    features: DenseMatrix,
    concepts: DenseMatrix,
    labels: Vec<ClassId>,
    class_count: usize,
}

impl LabeledTable {
    pub fn new(
        features: DenseMatrix,
        concepts: DenseMatrix,
        labels: Vec<ClassId>,
        class_count: usize,
    ) -> Result<Self, HarnessError> {
        let n = features.rows();
        if concepts.rows() != n || labels.len() != n {
            return Err(HarnessError::Table(format!(
                "row counts disagree: features {n}, concepts {}, labels {}",
                concepts.rows(),
                labels.len()
            )));
        }
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= class_count) {
            return Err(HarnessError::Table(format!("label {l} at row {row} >= class count {class_count}")));
        }
        if let Some(idx) = concepts.as_slice().iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(HarnessError::Table(format!(
                "concept value at row {}, column {} is not 0/1",
                idx / concepts.cols().max(1),
                idx % concepts.cols().max(1)
            )));
        }
        if !features.is_finite() {
            return Err(HarnessError::Table("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            concepts,
            labels,
            class_count,
        })
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn concepts(&self) -> &DenseMatrix {
        &self.concepts
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn concept_count(&self) -> usize {
        self.concepts.cols()
    }

    /// Concepts sorted by the lowest class id that uses them (ties and
    /// unused concepts by concept id, unused last).
    pub fn concept_order_by_first_use(&self) -> Vec<ConceptId> {
        let l = self.concept_count();
        let mut first_use = vec![u32::MAX; l];
        for (i, &label) in self.labels.iter().enumerate() {
            for (j, slot) in first_use.iter_mut().enumerate() {
                if self.concepts[(i, j)] == 1.0 {
                    *slot = (*slot).min(label);
                }
            }
        }
        let mut order: Vec<ConceptId> = (0..l as ConceptId).collect();
        order.sort_by_key(|&c| (first_use[c as usize], c));
        order
    }
}

/// Which classes and concepts each phase introduces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CicilSchedule {
    pub n_frac: f64,
    pub m_frac: f64,
    pub phases: usize,
    pub per_phase_classes: Vec<Vec<ClassId>>,
    pub per_phase_concepts: Vec<Vec<ConceptId>>,
}

/// `ceil(frac · count)`, robust to representation error in `frac`.
fn fraction_count(frac: f64, count: usize) -> usize {
    ((frac * count as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Splits `items` into `parts` runs, the first `len % parts` one longer.
fn even_split<T: Copy>(items: &[T], parts: usize) -> Vec<Vec<T>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

impl CicilSchedule {
    /// Schedule over classes `0..class_count` and concepts
    /// `0..concept_count`, both in id order.
    pub fn build(
        class_count: usize,
        concept_count: usize,
        n_frac: f64,
        m_frac: f64,
        phases: usize,
    ) -> Result<Self, HarnessError> {
        let order: Vec<ConceptId> = (0..concept_count as ConceptId).collect();
        Self::build_with_concept_order(class_count, &order, n_frac, m_frac, phases)
    }

    /// Like [`build`](Self::build) but concepts enter in `concept_order`.
    pub fn build_with_concept_order(
        class_count: usize,
        concept_order: &[ConceptId],
        n_frac: f64,
        m_frac: f64,
        phases: usize,
    ) -> Result<Self, HarnessError> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        if phases == 0 {
            return cfg("phase count must be >= 1".into());
        }
        for (name, f) in [("n", n_frac), ("m", m_frac)] {
            if !(f > 0.0 && f <= 1.0) {
                return cfg(format!("{name} fraction must lie in (0, 1], got {f}"));
            }
            if phases >= 2 && f >= 1.0 {
                return cfg(format!("{name} fraction must be < 1 when there are incremental phases"));
            }
        }
        if class_count == 0 || concept_order.is_empty() {
            return cfg("need at least one class and one concept".into());
        }
        let base_classes = fraction_count(n_frac, class_count).max(1);
        let base_concepts = fraction_count(m_frac, concept_order.len()).max(1);
        let remaining = class_count - base_classes.min(class_count);
        if phases >= 2 && remaining < phases - 1 {
            return cfg(format!(
                "{remaining} remaining classes cannot fill {} incremental phases",
                phases - 1
            ));
        }
        let classes: Vec<ClassId> = (0..class_count as ClassId).collect();
        let mut per_phase_classes = vec![classes[..base_classes].to_vec()];
        let mut per_phase_concepts = vec![concept_order[..base_concepts].to_vec()];
        if phases >= 2 {
            per_phase_classes.extend(even_split(&classes[base_classes..], phases - 1));
            per_phase_concepts.extend(even_split(&concept_order[base_concepts..], phases - 1));
        }
        Ok(Self {
            n_frac,
            m_frac,
            phases,
            per_phase_classes,
            per_phase_concepts,
        })
    }

    /// Concepts introduced in phases `0..=t`, in introduction order.
    pub fn visible_concepts(&self, t: usize) -> Vec<ConceptId> {
        self.per_phase_concepts[..=t.min(self.phases - 1)].concat()
    }

    pub fn phase_of_class(&self, class: ClassId) -> Option<usize> {
        self.per_phase_classes.iter().position(|p| p.contains(&class))
    }
}

/// Per-class train/test partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Row indices of `class` split into (train, test). The shuffle depends
/// only on the split seed and the class id.
pub fn class_split(table: &LabeledTable, class: ClassId, split: &SplitConfig) -> (Vec<usize>, Vec<usize>) {
    let mut rows: Vec<usize> = (0..table.len()).filter(|&i| table.labels[i] == class).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(split.seed, u64::from(class)));
    rows.shuffle(&mut rng);
    let n_train = ((rows.len() as f64) * split.train_fraction).round() as usize;
    let test = rows.split_off(n_train.min(rows.len()));
    (rows, test)
}

fn batch_from_rows(
    table: &LabeledTable,
    rows: &[usize],
    concept_ids: &[ConceptId],
    class_ids: &[ClassId],
) -> Result<PhaseBatch, HarnessError> {
    let cols: Vec<usize> = concept_ids.iter().map(|&c| c as usize).collect();
    let features = table.features.select_rows(rows);
    let concepts = table.concepts.select_rows(rows).select_cols(&cols);
    let labels: Vec<ClassId> = rows.iter().map(|&i| table.labels[i]).collect();
    Ok(PhaseBatch::from_labels(
        features,
        concepts,
        concept_ids.to_vec(),
        &labels,
        class_ids.to_vec(),
    )?)
}

/// Train and test batches of phase `t`: samples of that phase's classes,
/// annotated with every concept visible by phase `t`.
pub fn slice_phase(
    table: &LabeledTable,
    schedule: &CicilSchedule,
    t: usize,
    split: &SplitConfig,
) -> Result<(PhaseBatch, PhaseBatch), HarnessError> {
    if t >= schedule.phases {
        return Err(HarnessError::PhaseOutOfRange {
            phase: t,
            phases: schedule.phases,
        });
    }
    if !(0.0..=1.0).contains(&split.train_fraction) {
        return Err(HarnessError::Config(format!(
            "train fraction must lie in [0, 1], got {}",
            split.train_fraction
        )));
    }
    let concept_ids = schedule.visible_concepts(t);
    if let Some(&c) = concept_ids.iter().find(|&&c| c as usize >= table.concept_count()) {
        return Err(HarnessError::Config(format!("schedule concept {c} not in table")));
    }
    let class_ids = &schedule.per_phase_classes[t];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for &class in class_ids {
        let (tr, te) = class_split(table, class, split);
        train.extend(tr);
        test.extend(te);
    }
    Ok((
        batch_from_rows(table, &train, &concept_ids, class_ids)?,
        batch_from_rows(table, &test, &concept_ids, class_ids)?,
    ))
}

/// Parameters of a synthetic table whose features are a noisy linear image
/// of each class's concept vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d_z: usize,
    pub classes: usize,
    pub concepts: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    /// `classes × concepts`; row `k` is the concept vector of class `k`.
    pub concept_class_map: Vec<Vec<bool>>,
}

impl SyntheticSpec {
    /// Class `k` owns the concept band `[k·L/K, (k+1)·L/K)` and, for
    /// `k > 0`, additionally reuses one seeded concept from earlier bands.
    pub fn banded(
        d_z: usize,
        classes: usize,
        concepts: usize,
        samples_per_class: usize,
        seed: u64,
        noise_sigma: f64,
    ) -> Self {
        let mut stream = GaussianStream::new(derive_seed(seed, 2));
        let mut map = vec![vec![false; concepts]; classes];
        for (k, row) in map.iter_mut().enumerate() {
            if concepts == 0 {
                break;
            }
            let start = k * concepts / classes;
            let end = ((k + 1) * concepts / classes).max(start + 1).min(concepts);
            for c in row.iter_mut().take(end).skip(start.min(concepts - 1)) {
                *c = true;
            }
            if start > 0 {
                row[(stream.next_u64() % start as u64) as usize] = true;
            }
        }
        Self {
            d_z,
            classes,
            concepts,
            samples_per_class,
            seed,
            noise_sigma,
            concept_class_map: map,
        }
    }

    /// The desk-scale benchmark: 10 classes, 12 concepts, 16-dim features.
    pub fn default_benchmark() -> Self {
        Self::banded(16, 10, 12, 40, 7, 0.01)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.d_z == 0 || self.classes == 0 || self.concepts == 0 {
            return fail("synthetic dims must be >= 1".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return fail(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.concept_class_map.len() != self.classes
            || self.concept_class_map.iter().any(|r| r.len() != self.concepts)
        {
            return fail("concept_class_map must be classes x concepts".into());
        }
        if let Some(k) = self.concept_class_map.iter().position(|r| !r.contains(&true)) {
            return fail(format!("class {k} activates no concept"));
        }
        Ok(())
    }
}

/// Rows grouped by class: `features = c_k · M + N(0, σ²)` with a seeded
/// Gaussian mixing matrix `M` (`concepts × d_z`).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledTable, HarnessError> {
    spec.validate()?;
    let mut mix_stream = GaussianStream::new(derive_seed(spec.seed, 0));
    let mixing = DenseMatrix::from_fn(spec.concepts, spec.d_z, |_, _| mix_stream.next_normal());
    let n = spec.classes * spec.samples_per_class;
    let mut concepts = DenseMatrix::zeros(n, spec.concepts);
    let mut labels = Vec::with_capacity(n);
    for k in 0..spec.classes {
        for s in 0..spec.samples_per_class {
            let row = k * spec.samples_per_class + s;
            for (j, &on) in spec.concept_class_map[k].iter().enumerate() {
                concepts[(row, j)] = f64::from(u8::from(on));
            }
            labels.push(k as ClassId);
        }
    }
    let clean = concepts.matmul(&mixing).map_err(EngineError::from)?;
    let mut noise_stream = GaussianStream::new(derive_seed(spec.seed, 1));
    let features = if spec.noise_sigma > 0.0 {
        DenseMatrix::from_fn(n, spec.d_z, |i, j| clean[(i, j)] + spec.noise_sigma * noise_stream.next_normal())
    } else {
        clean
    };
    LabeledTable::new(features, concepts, labels, spec.classes)
}


#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn awa_style_two_phase_split() {
        let s = CicilSchedule::build(50, 85, 0.5, 0.5, 2).unwrap();
        assert_eq!(s.per_phase_classes[0], (0..25).collect::<Vec<_>>());
        assert_eq!(s.per_phase_classes[1], (25..50).collect::<Vec<_>>());
        assert_eq!(s.per_phase_concepts[0], (0..43).collect::<Vec<_>>());
        assert_eq!(s.per_phase_concepts[1], (43..85).collect::<Vec<_>>());
    }

    #[test]
    fn single_phase_holds_everything() {
        let s = CicilSchedule::build(7, 5, 1.0, 1.0, 1).unwrap();
        assert_eq!(s.per_phase_classes, vec![(0..7).collect::<Vec<_>>()]);
        assert_eq!(s.per_phase_concepts, vec![(0..5).collect::<Vec<_>>()]);
    }

    #[test]
    fn infeasible_splits() {
        let s = CicilSchedule::build(10, 4, 0.5, 0.5, 6).unwrap();
        assert!(s.per_phase_classes[1..].iter().all(|p| p.len() == 1));
        assert!(matches!(CicilSchedule::build(10, 4, 0.5, 0.5, 7), Err(HarnessError::Config(_))));
        assert!(CicilSchedule::build(10, 4, 1.0, 0.5, 2).is_err());
        assert!(CicilSchedule::build(10, 4, 0.0, 0.5, 2).is_err());
        assert!(CicilSchedule::build(10, 4, 0.5, 0.5, 0).is_err());
    }

    #[test]
    fn uneven_remainders_front_load() {
        let s = CicilSchedule::build(10, 10, 0.3, 0.3, 4).unwrap();
        let sizes: Vec<usize> = s.per_phase_classes.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        let visible: Vec<usize> = (0..4).map(|t| s.visible_concepts(t).len()).collect();
        assert_eq!(visible, vec![3, 6, 8, 10]);
    }

    #[test]
    fn first_use_ordering() {
        let features = DenseMatrix::zeros(3, 1);
        let concepts = DenseMatrix::from_rows(&[[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 0.0, 0.0]]);
        let t = LabeledTable::new(features, concepts, vec![1, 2, 0], 3).unwrap();
        // concept 1 used by class 0, 0 and 3 by class 2, 2 unused.
        assert_eq!(t.concept_order_by_first_use(), vec![1, 0, 3, 2]);
    }

    #[test]
    fn slicing_restricts_classes_and_concepts() {
        let spec = SyntheticSpec::banded(4, 4, 6, 6, 3, 0.0);
        let table = generate_synthetic(&spec).unwrap();
        let schedule = CicilSchedule::build(4, 6, 0.5, 0.5, 2).unwrap();
        let (train, test) = slice_phase(&table, &schedule, 0, &SplitConfig::default()).unwrap();
        assert_eq!(train.class_ids(), &[0, 1]);
        assert!(train.labels().iter().chain(test.labels().iter()).all(|&l| l < 2));
        assert_eq!(train.concept_ids(), &[0, 1, 2]);
        let (train1, _) = slice_phase(&table, &schedule, 1, &SplitConfig::default()).unwrap();
        assert_eq!(train1.concept_ids(), &[0, 1, 2, 3, 4, 5]);
        assert!(matches!(
            slice_phase(&table, &schedule, 2, &SplitConfig::default()),
            Err(HarnessError::PhaseOutOfRange { phase: 2, phases: 2 })
        ));
    }

    #[test]
    fn split_counts_follow_ratio() {
        let spec = SyntheticSpec::banded(3, 5, 5, 7, 9, 0.1);
        let table = generate_synthetic(&spec).unwrap();
        for frac in [0.5, 0.3, 0.8] {
            let split = SplitConfig { train_fraction: frac, seed: 4 };
            for class in 0..5 {
                let (tr, te) = class_split(&table, class, &split);
                assert_eq!(tr.len() + te.len(), 7);
                assert!((tr.len() as f64 - 7.0 * frac).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn noiseless_same_class_rows_identical() {
        let spec = SyntheticSpec::banded(5, 3, 4, 4, 1, 0.0);
        let table = generate_synthetic(&spec).unwrap();
        assert_eq!(table.features().row(0), table.features().row(1));
        assert_ne!(table.features().row(0), table.features().row(4));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default_benchmark();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        let bits = |t: &LabeledTable| t.features().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a, b);
    }

    #[test]
    fn banded_map_is_valid() {
        let spec = SyntheticSpec::default_benchmark();
        spec.validate().unwrap();
        let rows: BTreeSet<Vec<bool>> = spec.concept_class_map.iter().cloned().collect();
        assert_eq!(rows.len(), spec.classes, "class concept vectors must be distinct");
        let fewer = SyntheticSpec::banded(4, 6, 3, 2, 0, 0.0);
        fewer.validate().unwrap();
    }

    #[test]
    fn table_validation() {
        let f = DenseMatrix::zeros(2, 2);
        assert!(LabeledTable::new(f.clone(), DenseMatrix::zeros(2, 1), vec![0, 3], 2).is_err());
        assert!(LabeledTable::new(f.clone(), DenseMatrix::from_rows(&[[2.0], [0.0]]), vec![0, 1], 2).is_err());
        assert!(LabeledTable::new(f, DenseMatrix::zeros(1, 1), vec![0, 1], 2).is_err());
    }
}
