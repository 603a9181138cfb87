//! Independent reference implementations for integration tests: plain
//! `Vec<Vec<f64>>` arithmetic with Gauss-Jordan inversion, no use of the
//! library's solvers.

#![allow(dead_code)]

use concil::harness::{generate_synthetic, slice_phase};
use concil::{CicilSchedule, DenseMatrix, EngineConfig, LabeledTable, ModelState, PhaseBatch, SplitConfig, SyntheticSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rows_of(m: &DenseMatrix) -> Mat {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn transpose(a: &Mat, cols: usize) -> Mat {
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat, inner: usize, cols: usize) -> Mat {
    a.iter()
        .map(|r| {
            (0..cols)
                .map(|j| (0..inner).map(|k| r[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &Mat) -> Mat {
    let n = a.len();
    let mut aug: Mat = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "oracle: singular matrix");
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        let pivot_row = aug[col].clone();
        for (r, row) in aug.iter_mut().enumerate() {
            if r != col {
                let f = row[col];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// `(XᵀX + λI)⁻¹`.
pub fn inverse_correlation(x: &Mat, d: usize, lambda: f64) -> Mat {
    let xt = transpose(x, d);
    let mut g = matmul(&xt, x, x.len(), d);
    for (i, row) in g.iter_mut().enumerate() {
        row[i] += lambda;
    }
    invert(&g)
}

/// `(XᵀX + λI)⁻¹ XᵀY`.
pub fn ridge(x: &Mat, d: usize, y: &Mat, k: usize, lambda: f64) -> Mat {
    let r = inverse_correlation(x, d, lambda);
    let xty = matmul(&transpose(x, d), y, x.len(), k);
    matmul(&r, &xty, d, k)
}

pub fn max_abs_diff(a: &Mat, b: &DenseMatrix) -> f64 {
    assert_eq!((a.len(), a.first().map_or(b.cols(), Vec::len)), b.shape(), "oracle shape");
    a.iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, v)| (i, j, *v)))
        .map(|(i, j, v)| (v - b[(i, j)]).abs())
        .fold(0.0, f64::max)
}

/// A seeded stream: table, schedule, split and engine config.
#[derive(Debug, Clone)]
pub struct StreamCase {
    pub table: LabeledTable,
    pub schedule: CicilSchedule,
    pub split: SplitConfig,
    pub config: EngineConfig,
}

impl StreamCase {
    /// Random small-scale case with `phases` phases.
    pub fn random(seed: u64, phases: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.gen_range((2 * phases).saturating_sub(1).max(2)..=10);
        let concepts = rng.gen_range(phases.max(2)..=12);
        let spec = SyntheticSpec::banded(
            rng.gen_range(2..=16),
            classes,
            concepts,
            rng.gen_range(3..=10),
            rng.gen(),
            rng.gen_range(0.0..0.3),
        );
        let config = EngineConfig {
            lambda1: rng.gen_range(0.05..2.0),
            lambda2: rng.gen_range(0.05..2.0),
            backbone_dim: rng.gen_range(8..=64),
            concept_dim: rng.gen_range(4..=30),
            backbone_seed: rng.gen(),
            concept_seed: rng.gen(),
            ..EngineConfig::default()
        };
        let (n, m) = if phases == 1 { (1.0, 1.0) } else { (0.5, 0.5) };
        Self {
            table: generate_synthetic(&spec).unwrap(),
            schedule: CicilSchedule::build(classes, concepts, n, m, phases).unwrap(),
            split: SplitConfig {
                train_fraction: 0.6,
                seed: rng.gen(),
            },
            config,
        }
    }

    pub fn phase(&self, t: usize) -> (PhaseBatch, PhaseBatch) {
        slice_phase(&self.table, &self.schedule, t, &self.split).unwrap()
    }

    pub fn train_batches(&self) -> Vec<PhaseBatch> {
        (0..self.schedule.phases).map(|t| self.phase(t).0).collect()
    }
}

/// Model state after each phase of `batches`.
pub fn run_concil(batches: &[PhaseBatch], config: &EngineConfig) -> Vec<ModelState> {
    let mut states = vec![ModelState::base_fit(&batches[0], config).unwrap()];
    for b in &batches[1..] {
        let next = states.last().unwrap().phase_update(b).unwrap();
        states.push(next);
    }
    states
}

/// Closed-form solution on all phases' data stacked in the final layout.
pub struct JointOracle {
    pub w_c: Mat,
    pub w_y: Mat,
    pub r_c: Mat,
    pub r_y: Mat,
}

/// Builds the joint fit for the final state of `states`. Concept targets
/// a phase does not annotate are 0. The classifier's inputs are each
/// phase's expanded concept predictions at that phase, zero-padded to the
/// final concept width before expansion.
pub fn joint_oracle(batches: &[PhaseBatch], states: &[ModelState]) -> JointOracle {
    let last = states.last().unwrap().head();
    let concept_ids = last.concept_ids();
    let class_ids = last.class_ids();
    let (l, k) = (concept_ids.len(), class_ids.len());
    let dz = last.backbone_expansion().out_dim();
    let dc = last.concept_expansion().out_dim();
    let cfg = last.config();

    let (mut z, mut c, mut cstar, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (batch, state) in batches.iter().zip(states) {
        let zb = last.expand_features(batch.features()).unwrap();
        let phase_wc = state.head().concept_weights();
        let c_hat = zb.matmul(phase_wc).unwrap().pad_cols(l - phase_wc.cols());
        let cs = last.concept_expansion().expand(&c_hat).unwrap();
        for i in 0..batch.len() {
            z.push(zb.row(i).to_vec());
            cstar.push(cs.row(i).to_vec());
            let mut crow = vec![0.0; l];
            for (j, id) in batch.concept_ids().iter().enumerate() {
                let col = concept_ids.iter().position(|x| x == id).unwrap();
                crow[col] = batch.concepts()[(i, j)];
            }
            c.push(crow);
            let mut yrow = vec![0.0; k];
            for (j, id) in batch.class_ids().iter().enumerate() {
                let col = class_ids.iter().position(|x| x == id).unwrap();
                yrow[col] = batch.classes()[(i, j)];
            }
            y.push(yrow);
        }
    }
    JointOracle {
        w_c: ridge(&z, dz, &c, l, cfg.lambda1),
        w_y: ridge(&cstar, dc, &y, k, cfg.lambda2),
        r_c: inverse_correlation(&z, dz, cfg.lambda1),
        r_y: inverse_correlation(&cstar, dc, cfg.lambda2),
    }
}

/// Largest deviation of the final recursive state from the joint oracle:
/// (weights, inverse correlations).
pub fn joint_gap(batches: &[PhaseBatch], states: &[ModelState]) -> (f64, f64) {
    let oracle = joint_oracle(batches, states);
    let s = states.last().unwrap();
    let w = max_abs_diff(&oracle.w_c, s.head().concept_weights()).max(max_abs_diff(&oracle.w_y, s.head().class_weights()));
    let r = max_abs_diff(&oracle.r_c, s.concept_correlation()).max(max_abs_diff(&oracle.r_y, s.class_correlation()));
    (w, r)
}

pub fn bits(m: &DenseMatrix) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}
