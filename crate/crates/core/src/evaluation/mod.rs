//! Downstream metrics: keypoint AP and feature-distribution distances over
//! precomputed embeddings.

mod ap;
mod distribution;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ap::{
    ap_at_threshold, ap_table, ground_truth_from_coco, predictions_from_json, GroundTruth, DEFAULT_REF_SIZE,
    DEFAULT_THRESHOLDS,
};
pub use distribution::{fid, kid, kid_default, mmd2_unbiased, KidEstimate, DEFAULT_KID_BLOCK};

use crate::composition::CompositionError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth has no labelled keypoints")]
    EmptyGroundTruth,
    #[error("no prediction matches any ground-truth image id")]
    NoOverlap,
    #[error("ground-truth box for image {0} has zero diagonal")]
    DegenerateBox(u64),
    #[error("embedding dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Keypoints(#[from] CompositionError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbHeader {
    n: usize,
    d: usize,
    #[serde(default)]
    source: String,
}

/// `n` embeddings of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub data: Vec<f64>,
    pub dim: usize,
    /// Free-form provenance label (model name, dataset, ...).
    pub source: String,
}

impl EmbeddingSet {
    pub fn new(data: Vec<f64>, n: usize, dim: usize, source: impl Into<String>) -> Result<Self, EvalError> {
        if dim == 0 || data.len() != n * dim {
            return Err(EvalError::Invalid(format!(
                "{} values do not form {n} rows of dimension {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(EvalError::Invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            data,
            dim,
            source: source.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], source: impl Into<String>) -> Result<Self, EvalError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(EvalError::Invalid("rows have different lengths".into()));
        }
        Self::new(rows.concat(), rows.len(), dim, source)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Binary `.emb` layout: `EMB1`, u32 LE header length, JSON header
    /// `{"n", "d", "source"}`, then `n*d` little-endian f32 values.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec(&EmbHeader {
            n: self.len(),
            d: self.dim,
            source: self.source.clone(),
        })?;
        w.write_all(EMB_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let io = |source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_from(BufReader::new(file)).map_err(|message| EvalError::Format {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, String> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != EMB_MAGIC {
            return Err("not an embedding file (bad magic)".into());
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|e| e.to_string())?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)
            .map_err(|e| format!("truncated header: {e}"))?;
        let header: EmbHeader = serde_json::from_slice(&header).map_err(|e| format!("bad header: {e}"))?;
        let count = header
            .n
            .checked_mul(header.d)
            .ok_or_else(|| "header sizes overflow".to_string())?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| e.to_string())?;
        if bytes.len() != count * 4 {
            return Err(format!("expected {} data bytes, found {}", count * 4, bytes.len()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(data, header.n, header.d, header.source).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub thresholds: Vec<f64>,
    pub ref_size: f64,
    pub kid_block: Option<usize>,
}

/// Machine-readable metrics report written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ap: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kid: Option<KidEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<MetricsConfig>,
}
