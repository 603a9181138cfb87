//! Seeded random feature expansion `x ↦ max(0, x·W)`.
//!
//! Weights come from [`GaussianStream`], a small generator that is part of
//! the checkpoint contract: a layer is persisted as its seed, scale, base
//! shape and growth history, and rebuilt by replaying the stream.
//!
//! # Generator
//!
//! * `SplitMix64`: `state += 0x9E3779B97F4A7C15`, then
//!   `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9`,
//!   `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`, output `z ^ (z >> 31)`
//!   (wrapping arithmetic). The initial state is the seed.
//! * Uniform: `((u >> 11) + 1) * 2⁻⁵³`, which lies in `(0, 1]`.
//! * Normal: Box-Muller cosine branch, one normal per two uniforms `u1, u2`:
//!   `sqrt(-2 ln u1) * cos(2π u2)`.
//! * A weight is `scale * normal`; blocks are filled row-major.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{DenseMatrix, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpansionError {
    #[error("invalid expansion argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Deterministic standard-normal stream. See the module docs for the exact
/// algorithm.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    state: u64,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `(0, 1]`.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Derives an independent seed from a base seed and a stream index, so that
/// e.g. per-phase growth blocks do not share a stream with the base block.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut s = GaussianStream::new(base ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    s.next_u64()
}

fn gaussian_block(rows: usize, cols: usize, seed: u64, scale: f64) -> DenseMatrix {
    let mut stream = GaussianStream::new(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| scale * stream.next_normal())
}

/// One structural growth step of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthRecord {
    pub phase: u64,
    pub added_in_rows: usize,
    pub added_out_cols: usize,
    pub sub_seed: u64,
}

/// Random projection followed by a rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionLayer {
    weight: DenseMatrix,
    seed: u64,
    scale: f64,
    base_in: usize,
    base_out: usize,
    growth: Vec<GrowthRecord>,
}

impl ExpansionLayer {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64, scale: f64) -> Result<Self, ExpansionError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(ExpansionError::InvalidArgument(format!(
                "dimensions must be >= 1, got {in_dim}x{out_dim}"
            )));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(ExpansionError::InvalidArgument(format!("scale must be > 0, got {scale}")));
        }
        Ok(Self {
            weight: gaussian_block(in_dim, out_dim, seed, scale),
            seed,
            scale,
            base_in: in_dim,
            base_out: out_dim,
            growth: Vec::new(),
        })
    }

    /// Variance-preserving default standard deviation `1/√in_dim`.
    pub fn default_scale(in_dim: usize) -> f64 {
        1.0 / (in_dim.max(1) as f64).sqrt()
    }

    /// Rebuilds a layer from its seed and growth history.
    pub fn replay(
        base_in: usize,
        base_out: usize,
        seed: u64,
        scale: f64,
        growth: &[GrowthRecord],
    ) -> Result<Self, ExpansionError> {
        let mut layer = Self::new(base_in, base_out, seed, scale)?;
        for g in growth {
            layer = layer.grow(g.phase, g.added_in_rows, g.added_out_cols, g.sub_seed);
        }
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &DenseMatrix {
        &self.weight
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn base_dims(&self) -> (usize, usize) {
        (self.base_in, self.base_out)
    }

    pub fn growth(&self) -> &[GrowthRecord] {
        &self.growth
    }

    /// `max(0, inputs · W)`.
    pub fn expand(&self, inputs: &DenseMatrix) -> Result<DenseMatrix, ExpansionError> {
        let pre = inputs.matmul(&self.weight)?;
        Ok(pre.map(|v| v.max(0.0)))
    }

    /// Appends `new_in_rows` inputs and `new_out_cols` outputs.
    ///
    /// The result is block structured: `[[W, 0], [0, G]]` where `G` is a
    /// fresh `new_in_rows × new_out_cols` Gaussian block drawn from
    /// `sub_seed`. Inputs that are zero on the new coordinates therefore
    /// reproduce the old outputs and are exactly zero on the new ones.
    pub fn grow(&self, phase: u64, new_in_rows: usize, new_out_cols: usize, sub_seed: u64) -> Self {
        let fresh = gaussian_block(new_in_rows, new_out_cols, sub_seed, self.scale);
        let weight = self.weight.block_diag(&fresh);
        let mut growth = self.growth.clone();
        growth.push(GrowthRecord {
            phase,
            added_in_rows: new_in_rows,
            added_out_cols: new_out_cols,
            sub_seed,
        });
        Self {
            weight,
            seed: self.seed,
            scale: self.scale,
            base_in: self.base_in,
            base_out: self.base_out,
            growth,
        }
    }
}
