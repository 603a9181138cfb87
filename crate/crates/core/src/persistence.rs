//! On-disk formats: model checkpoints and feature bundles.
//!
//! All binary integers and floats are little-endian. The byte-level layout
//! of both formats is documented in `docs/formats.md` at the repository root.
//!
//! A checkpoint stores expansion layers as seed + growth history (rebuilt by
//! replay), the weight and inverse correlation matrices, and the id ledgers.
//! It never contains training samples.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::baseline::BaselineState;
use crate::engine::{ClassId, ConceptHead, ConceptId, EngineConfig, EngineError, ModelState};
use crate::expansion::{ExpansionError, ExpansionLayer, GrowthRecord};
use crate::harness::{HarnessError, LabeledTable};
use crate::linalg::DenseMatrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CONCILCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;
const DIGEST_LEN: usize = 32;

pub const BUNDLE_VERSION: &str = "concil-bundle/1";
pub const PAYLOAD_MAGIC: &[u8; 4] = b"CBF1";
const PAYLOAD_HEADER_LEN: usize = 24;

/// Location and description of a bundle schema violation.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub file: String,
    pub field: Option<String>,
    /// 1-based.
    pub row: Option<usize>,
    /// 1-based.
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(field) = &self.field {
            write!(f, " field `{field}`")?;
        }
        if let Some(r) = self.row {
            write!(f, " row {r}")?;
        }
        if let Some(c) = self.column {
            write!(f, " column {c}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: String, expected: String },
    #[error("checkpoint digest mismatch: stored {stored}, computed {computed}")]
    DigestMismatch { stored: Digest, computed: Digest },
    #[error("checkpoint holds a {found} state, expected {expected}")]
    KindMismatch { found: &'static str, expected: &'static str },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("schema error: {0}")]
    Schema(SchemaError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistenceError + '_ {
    move |source| PersistenceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// SHA-256 content digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    fn of(bytes: &[u8]) -> Self {
        let out = Sha256::digest(bytes);
        let mut d = [0u8; DIGEST_LEN];
        d.copy_from_slice(&out);
        Self(d)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({self})")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StateKind {
    Concil = 0,
    Baseline = 1,
}

impl StateKind {
    fn name(self) -> &'static str {
        match self {
            StateKind::Concil => "concil",
            StateKind::Baseline => "baseline",
        }
    }
}

#[derive(Default)]
struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn opt_f64(&mut self, v: Option<f64>) {
        self.u8(u8::from(v.is_some()));
        self.f64(v.unwrap_or(0.0));
    }
    fn opt_usize(&mut self, v: Option<usize>) {
        self.u8(u8::from(v.is_some()));
        self.usize(v.unwrap_or(0));
    }
    fn ids(&mut self, ids: &[u32]) {
        self.usize(ids.len());
        for &id in ids {
            self.u32(id);
        }
    }
    fn matrix(&mut self, m: &DenseMatrix) {
        self.usize(m.rows());
        self.usize(m.cols());
        for &v in m.as_slice() {
            self.f64(v);
        }
    }
    fn config(&mut self, c: &EngineConfig) {
        self.f64(c.lambda1);
        self.f64(c.lambda2);
        self.usize(c.backbone_dim);
        self.usize(c.concept_dim);
        self.u64(c.backbone_seed);
        self.u64(c.concept_seed);
        self.opt_f64(c.backbone_scale);
        self.opt_f64(c.concept_scale);
        self.opt_usize(c.growth_out_per_phase);
    }
    fn layer(&mut self, l: &ExpansionLayer) {
        let (bi, bo) = l.base_dims();
        self.usize(bi);
        self.usize(bo);
        self.u64(l.seed());
        self.f64(l.scale());
        self.usize(l.growth().len());
        for g in l.growth() {
            self.u64(g.phase);
            self.usize(g.added_in_rows);
            self.usize(g.added_out_cols);
            self.u64(g.sub_seed);
        }
    }
    fn head(&mut self, h: &ConceptHead) {
        self.u64(h.phase);
        self.config(&h.config);
        self.layer(&h.backbone_expansion);
        self.layer(&h.concept_expansion);
        self.ids(&h.concept_ids);
        self.ids(&h.class_ids);
        self.matrix(&h.w_c);
        self.matrix(&h.w_y);
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistenceError> {
        if self.buf.len() - self.pos < n {
            return Err(PersistenceError::Malformed(format!("truncated payload at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, PersistenceError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, PersistenceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, PersistenceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, PersistenceError> {
        usize::try_from(self.u64()?).map_err(|_| PersistenceError::Malformed("length overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64, PersistenceError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn flag(&mut self) -> Result<bool, PersistenceError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(PersistenceError::Malformed(format!("invalid option flag {b}"))),
        }
    }
    fn opt_f64(&mut self) -> Result<Option<f64>, PersistenceError> {
        let present = self.flag()?;
        let v = self.f64()?;
        Ok(present.then_some(v))
    }
    fn opt_usize(&mut self) -> Result<Option<usize>, PersistenceError> {
        let present = self.flag()?;
        let v = self.usize()?;
        Ok(present.then_some(v))
    }
    fn count(&mut self, elem_size: usize) -> Result<usize, PersistenceError> {
        let n = self.usize()?;
        if n.checked_mul(elem_size).is_none_or(|bytes| bytes > self.buf.len() - self.pos) {
            return Err(PersistenceError::Malformed(format!("implausible element count {n}")));
        }
        Ok(n)
    }
    fn ids(&mut self) -> Result<Vec<u32>, PersistenceError> {
        let n = self.count(4)?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn matrix(&mut self) -> Result<DenseMatrix, PersistenceError> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let len = rows
            .checked_mul(cols)
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.pos))
            .ok_or_else(|| PersistenceError::Malformed(format!("implausible matrix shape {rows}x{cols}")))?;
        let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        Ok(DenseMatrix::from_vec(rows, cols, data).expect("length checked"))
    }
    fn config(&mut self) -> Result<EngineConfig, PersistenceError> {
        Ok(EngineConfig {
            lambda1: self.f64()?,
            lambda2: self.f64()?,
            backbone_dim: self.usize()?,
            concept_dim: self.usize()?,
            backbone_seed: self.u64()?,
            concept_seed: self.u64()?,
            backbone_scale: self.opt_f64()?,
            concept_scale: self.opt_f64()?,
            growth_out_per_phase: self.opt_usize()?,
        })
    }
    fn layer(&mut self) -> Result<ExpansionLayer, PersistenceError> {
        let base_in = self.usize()?;
        let base_out = self.usize()?;
        let seed = self.u64()?;
        let scale = self.f64()?;
        let n = self.count(32)?;
        let mut growth = Vec::with_capacity(n);
        for _ in 0..n {
            growth.push(GrowthRecord {
                phase: self.u64()?,
                added_in_rows: self.usize()?,
                added_out_cols: self.usize()?,
                sub_seed: self.u64()?,
            });
        }
        Ok(ExpansionLayer::replay(base_in, base_out, seed, scale, &growth)?)
    }
    fn head(&mut self) -> Result<ConceptHead, PersistenceError> {
        Ok(ConceptHead {
            phase: self.u64()?,
            config: self.config()?,
            backbone_expansion: self.layer()?,
            concept_expansion: self.layer()?,
            concept_ids: self.ids()?,
            class_ids: self.ids()?,
            w_c: self.matrix()?,
            w_y: self.matrix()?,
        })
    }
    fn finish(&self) -> Result<(), PersistenceError> {
        if self.pos != self.buf.len() {
            return Err(PersistenceError::Malformed(format!(
                "{} trailing payload bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn frame(kind: StateKind, payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Digest::of(&out);
    out.extend_from_slice(&digest.0);
    out
}

/// Verifies the digest and header and returns the payload.
fn unframe(bytes: &[u8], expected: StateKind) -> Result<&[u8], PersistenceError> {
    if bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(PersistenceError::Malformed(format!("file too short ({} bytes)", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let computed = Digest::of(body);
    let stored = Digest(tail.try_into().unwrap());
    if stored != computed {
        return Err(PersistenceError::DigestMismatch { stored, computed });
    }
    if &body[..8] != CHECKPOINT_MAGIC {
        return Err(PersistenceError::Malformed("bad magic".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(PersistenceError::VersionMismatch {
            found: version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let kind = match body[12] {
        0 => StateKind::Concil,
        1 => StateKind::Baseline,
        k => return Err(PersistenceError::Malformed(format!("unknown state kind {k}"))),
    };
    if kind != expected {
        return Err(PersistenceError::KindMismatch {
            found: kind.name(),
            expected: expected.name(),
        });
    }
    let len = u64::from_le_bytes(body[16..24].try_into().unwrap());
    if len != (body.len() - HEADER_LEN) as u64 {
        return Err(PersistenceError::Malformed("payload length disagrees with file size".into()));
    }
    Ok(&body[HEADER_LEN..])
}

pub fn encode_checkpoint(state: &ModelState) -> Vec<u8> {
    let mut e = Encoder::default();
    e.head(&state.head);
    e.matrix(&state.r_c);
    e.matrix(&state.r_y);
    frame(StateKind::Concil, e.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState, PersistenceError> {
    let mut d = Decoder {
        buf: unframe(bytes, StateKind::Concil)?,
        pos: 0,
    };
    let head = d.head()?;
    let r_c = d.matrix()?;
    let r_y = d.matrix()?;
    d.finish()?;
    Ok(ModelState::from_parts(head, r_c, r_y)?)
}

pub fn encode_baseline_checkpoint(state: &BaselineState) -> Vec<u8> {
    let mut e = Encoder::default();
    e.head(&state.head);
    frame(StateKind::Baseline, e.buf)
}

pub fn decode_baseline_checkpoint(bytes: &[u8]) -> Result<BaselineState, PersistenceError> {
    let mut d = Decoder {
        buf: unframe(bytes, StateKind::Baseline)?,
        pos: 0,
    };
    let head = d.head()?;
    d.finish()?;
    Ok(BaselineState::from_head(head)?)
}

fn write_framed(bytes: &[u8], path: &Path) -> Result<Digest, PersistenceError> {
    fs::write(path, bytes).map_err(io_err(path))?;
    Ok(Digest(bytes[bytes.len() - DIGEST_LEN..].try_into().unwrap()))
}

/// Writes `state` to `path` and returns the stored digest.
pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<Digest, PersistenceError> {
    write_framed(&encode_checkpoint(state), path.as_ref())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState, PersistenceError> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(io_err(path))?)
}

pub fn save_baseline_checkpoint(state: &BaselineState, path: impl AsRef<Path>) -> Result<Digest, PersistenceError> {
    write_framed(&encode_baseline_checkpoint(state), path.as_ref())
}

pub fn load_baseline_checkpoint(path: impl AsRef<Path>) -> Result<BaselineState, PersistenceError> {
    let path = path.as_ref();
    decode_baseline_checkpoint(&fs::read(path).map_err(io_err(path))?)
}

// ---------------------------------------------------------------------------
// Feature bundles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Text,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadFile {
    pub file: String,
    pub encoding: Encoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub format_version: String,
    pub samples: usize,
    pub feature_dim: usize,
    pub class_count: usize,
    pub concept_count: usize,
    pub class_ids: Vec<ClassId>,
    pub concept_ids: Vec<ConceptId>,
    pub features: PayloadFile,
    pub concepts: PayloadFile,
    pub labels: PayloadFile,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

fn schema(file: &str, message: impl Into<String>) -> SchemaError {
    SchemaError {
        file: file.to_string(),
        field: None,
        row: None,
        column: None,
        message: message.into(),
    }
}

fn field_error(field: &str, message: impl Into<String>) -> PersistenceError {
    PersistenceError::Schema(SchemaError {
        field: Some(field.to_string()),
        ..schema(MANIFEST_FILE, message)
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum DType {
    F64 = 1,
    U32 = 2,
}

fn encode_binary_payload(dtype: DType, rows: usize, cols: usize, values: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(PAYLOAD_HEADER_LEN + rows * cols * 8);
    out.extend_from_slice(PAYLOAD_MAGIC);
    out.push(dtype as u8);
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in values {
        match dtype {
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            DType::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
        }
    }
    out
}

fn decode_binary_payload(file: &str, bytes: &[u8], dtype: DType) -> Result<(usize, usize, Vec<f64>), PersistenceError> {
    let err = |m: String| PersistenceError::Schema(schema(file, m));
    if bytes.len() < PAYLOAD_HEADER_LEN || &bytes[..4] != PAYLOAD_MAGIC {
        return Err(err("missing binary payload header".into()));
    }
    if bytes[4] != dtype as u8 {
        return Err(err(format!("payload dtype {} does not match expected {}", bytes[4], dtype as u8)));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let width = if dtype == DType::F64 { 8 } else { 4 };
    let body = &bytes[PAYLOAD_HEADER_LEN..];
    let expected = rows.checked_mul(cols).and_then(|n| n.checked_mul(width));
    if expected != Some(body.len()) {
        return Err(err(format!("header says {rows}x{cols} but body has {} bytes", body.len())));
    }
    let values = body
        .chunks_exact(width)
        .map(|c| match dtype {
            DType::F64 => f64::from_le_bytes(c.try_into().unwrap()),
            DType::U32 => f64::from(u32::from_le_bytes(c.try_into().unwrap())),
        })
        .collect();
    Ok((rows, cols, values))
}

fn encode_text_payload(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses comma-delimited rows. `integral` restricts cells to u32.
fn decode_text_payload(file: &str, text: &str, integral: bool) -> Result<(usize, Option<usize>, Vec<f64>), PersistenceError> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (r, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        let cells: Vec<&str> = line.split(',').collect();
        match cols {
            None => cols = Some(cells.len()),
            Some(c) if c != cells.len() => {
                return Err(PersistenceError::Schema(SchemaError {
                    row: Some(r + 1),
                    ..schema(file, format!("expected {c} columns, found {}", cells.len()))
                }))
            }
            _ => {}
        }
        for (c, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            let parsed = if integral {
                cell.parse::<u32>().map(f64::from).ok()
            } else {
                cell.parse::<f64>().ok().filter(|v| v.is_finite())
            };
            let v = parsed.ok_or_else(|| {
                PersistenceError::Schema(SchemaError {
                    row: Some(r + 1),
                    column: Some(c + 1),
                    ..schema(file, format!("cannot parse `{cell}`"))
                })
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((rows, cols, values))
}

/// Reads one payload and checks it against the manifest shape.
fn read_payload(
    dir: &Path,
    payload: &PayloadFile,
    dtype: DType,
    rows_field: (&str, usize),
    cols_field: (&str, usize),
) -> Result<Vec<f64>, PersistenceError> {
    let path = dir.join(&payload.file);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let name = payload.file.as_str();
    let (rows, cols, values) = match payload.encoding {
        Encoding::Binary => {
            let (r, c, v) = decode_binary_payload(name, &bytes, dtype)?;
            (r, Some(c), v)
        }
        Encoding::Text => {
            let text = std::str::from_utf8(&bytes).map_err(|e| PersistenceError::Schema(schema(name, e.to_string())))?;
            decode_text_payload(name, text, dtype == DType::U32)?
        }
    };
    if rows != rows_field.1 {
        return Err(field_error(
            rows_field.0,
            format!("manifest says {} but {name} has {rows} rows", rows_field.1),
        ));
    }
    // An empty text file carries no column count.
    if let Some(c) = cols {
        if c != cols_field.1 {
            return Err(field_error(
                cols_field.0,
                format!("manifest says {} but {name} has {c} columns", cols_field.1),
            ));
        }
    }
    Ok(values)
}

/// Reads a feature bundle directory.
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<LabeledTable, PersistenceError> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let n = manifest.samples;
    let features = read_payload(dir, &manifest.features, DType::F64, ("samples", n), ("feature_dim", manifest.feature_dim))?;
    let concepts = read_payload(dir, &manifest.concepts, DType::F64, ("samples", n), ("concept_count", manifest.concept_count))?;
    let labels = read_payload(dir, &manifest.labels, DType::U32, ("samples", n), ("labels", 1))?;

    let concept_file = manifest.concepts.file.as_str();
    if let Some(idx) = concepts.iter().position(|&v| v != 0.0 && v != 1.0) {
        let c = manifest.concept_count;
        return Err(PersistenceError::Schema(SchemaError {
            row: Some(idx / c + 1),
            column: Some(idx % c + 1),
            ..schema(concept_file, "concept annotations must be 0 or 1")
        }));
    }
    if let Some(idx) = labels.iter().position(|&l| l as usize >= manifest.class_count) {
        return Err(PersistenceError::Schema(SchemaError {
            row: Some(idx + 1),
            column: Some(1),
            ..schema(manifest.labels.file.as_str(), format!("label {} >= class_count", labels[idx]))
        }));
    }
    let features = DenseMatrix::from_vec(n, manifest.feature_dim, features).expect("shape checked");
    let concepts = DenseMatrix::from_vec(n, manifest.concept_count, concepts).expect("shape checked");
    let labels = labels.into_iter().map(|l| l as ClassId).collect();
    Ok(LabeledTable::new(features, concepts, labels, manifest.class_count)?)
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest, PersistenceError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: BundleManifest =
        toml::from_str(&text).map_err(|e| PersistenceError::Schema(schema(MANIFEST_FILE, e.to_string())))?;
    if manifest.format_version != BUNDLE_VERSION {
        return Err(PersistenceError::VersionMismatch {
            found: manifest.format_version,
            expected: BUNDLE_VERSION.into(),
        });
    }
    let dense = |ids: &[u32], count: usize| ids.len() == count && ids.iter().enumerate().all(|(i, &id)| id as usize == i);
    if !dense(&manifest.class_ids, manifest.class_count) {
        return Err(field_error("class_ids", format!("must list 0..{}", manifest.class_count)));
    }
    if !dense(&manifest.concept_ids, manifest.concept_count) {
        return Err(field_error("concept_ids", format!("must list 0..{}", manifest.concept_count)));
    }
    Ok(manifest)
}

/// Writes `table` as a bundle directory using one encoding for all payloads.
pub fn write_bundle(table: &LabeledTable, dir: impl AsRef<Path>, encoding: Encoding) -> Result<BundleManifest, PersistenceError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let ext = match encoding {
        Encoding::Text => "csv",
        Encoding::Binary => "bin",
    };
    let payload = |stem: &str| PayloadFile {
        file: format!("{stem}.{ext}"),
        encoding,
    };
    let manifest = BundleManifest {
        format_version: BUNDLE_VERSION.into(),
        samples: table.len(),
        feature_dim: table.feature_dim(),
        class_count: table.class_count(),
        concept_count: table.concept_count(),
        class_ids: (0..table.class_count() as ClassId).collect(),
        concept_ids: (0..table.concept_count() as ConceptId).collect(),
        features: payload("features"),
        concepts: payload("concepts"),
        labels: payload("labels"),
    };
    let labels = DenseMatrix::from_vec(table.len(), 1, table.labels().iter().map(|&l| f64::from(l)).collect())
        .expect("one label per row");
    for (spec, matrix, dtype) in [
        (&manifest.features, table.features(), DType::F64),
        (&manifest.concepts, table.concepts(), DType::F64),
        (&manifest.labels, &labels, DType::U32),
    ] {
        let bytes = match encoding {
            Encoding::Text => encode_text_payload(matrix).into_bytes(),
            Encoding::Binary => {
                encode_binary_payload(dtype, matrix.rows(), matrix.cols(), matrix.as_slice().iter().copied())
            }
        };
        let path = dir.join(&spec.file);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let text = toml::to_string(&manifest).map_err(|e| PersistenceError::Malformed(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}
