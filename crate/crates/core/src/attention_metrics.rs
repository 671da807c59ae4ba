//! Eigenvalue skewness of covariance self-attention matrices.
//!
//! For every layer `l` and head `h` of an utterance's attention maps `A`, the
//! spectrum of `A·Aᵀ` is summarized by its skewness; the utterance score is
//! the mean over all `L·H` maps and the dataset score the mean over
//! utterances. Comparing a baseline score `S_m` with a candidate `S_p` gives
//! the relative drop `(S_m - S_p) / S_m`.
//!
//! Attention tensor files are little-endian:
//!
//! ```text
//! "PMCTATTN" | u32 version=1 | u32 L | u32 H | u32 T | L*H*T*T f32 in (l, h, row, col) order
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ATTENTION_MAGIC: &[u8; 8] = b"PMCTATTN";
pub const ATTENTION_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

/// Tolerance on attention row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;
/// Negative eigenvalues no larger than this fraction of the largest are rounding noise.
pub const NEGATIVE_CLAMP: f64 = 1e-12;
/// A vector whose standard deviation is below this fraction of its magnitude is constant.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("non-finite value in attention map")]
    NonFinite,
    #[error("eigen decomposition did not converge")]
    EigenFailure,
    #[error("vector is constant (zero variance) or too short")]
    DegenerateVector,
    #[error("inconsistent shape: {0}")]
    InconsistentShape(String),
    #[error("invalid attention map: {0}")]
    InvalidMap(String),
    #[error("no utterances")]
    Empty,
    #[error("malformed attention file: {0}")]
    MalformedHeader(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T> = std::result::Result<T, AttentionError>;

/// Attention maps of one utterance: `layers × heads` square `size × size` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensorSet {
    pub utterance_id: String,
    layers: usize,
    heads: usize,
    size: usize,
    data: Vec<f32>,
}

impl AttentionTensorSet {
    pub fn new(
        utterance_id: impl Into<String>,
        layers: usize,
        heads: usize,
        size: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if layers == 0 || heads == 0 || size == 0 {
            return Err(AttentionError::InvalidMap(format!(
                "empty shape {layers}x{heads}x{size}"
            )));
        }
        if data.len() != layers * heads * size * size {
            return Err(AttentionError::InconsistentShape(format!(
                "{} values for L={layers} H={heads} T={size}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AttentionError::NonFinite);
        }
        let set = Self {
            utterance_id: utterance_id.into(),
            layers,
            heads,
            size,
            data,
        };
        set.check_rows()?;
        Ok(set)
    }

    /// Build from per-(layer, head) row-major matrices.
    pub fn from_maps(utterance_id: impl Into<String>, maps: &[Vec<DMatrix<f64>>]) -> Result<Self> {
        let layers = maps.len();
        let heads = maps.first().map_or(0, Vec::len);
        let size = maps.first().and_then(|l| l.first()).map_or(0, |m| m.nrows());
        let mut data = Vec::with_capacity(layers * heads * size * size);
        for layer in maps {
            if layer.len() != heads {
                return Err(AttentionError::InconsistentShape("ragged head count".into()));
            }
            for m in layer {
                if m.nrows() != size || m.ncols() != size {
                    return Err(AttentionError::InconsistentShape(
                        "maps must share one square size".into(),
                    ));
                }
                for r in 0..size {
                    data.extend((0..size).map(|c| m[(r, c)] as f32));
                }
            }
        }
        Self::new(utterance_id, layers, heads, size, data)
    }

    fn check_rows(&self) -> Result<()> {
        for (i, row) in self.data.chunks_exact(self.size).enumerate() {
            if row.iter().any(|&v| v < 0.0) {
                return Err(AttentionError::InvalidMap(format!("negative weight in row {i}")));
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(AttentionError::InvalidMap(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn map(&self, layer: usize, head: usize) -> DMatrix<f64> {
        let t = self.size;
        let off = (layer * self.heads + head) * t * t;
        DMatrix::from_row_iterator(t, t, self.data[off..off + t * t].iter().map(|&v| v as f64))
    }
}

/// Absolute eigenvalues of `A·Aᵀ`, sorted descending.
pub fn eigen_spectrum(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(AttentionError::InconsistentShape(format!(
            "{}x{} map",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(AttentionError::NonFinite);
    }
    let cov = a * a.transpose();
    let max_iter = 100 * a.nrows().max(10);
    let eig = SymmetricEigen::try_new(cov, f64::EPSILON, max_iter).ok_or(AttentionError::EigenFailure)?;
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut spectrum: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| {
            if v < 0.0 && -v <= NEGATIVE_CLAMP * lambda_max {
                0.0
            } else {
                v.abs()
            }
        })
        .collect();
    spectrum.sort_by(|a, b| b.total_cmp(a));
    Ok(spectrum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkewnessEstimator {
    /// Moment coefficient `g1 = m3 / m2^(3/2)`.
    #[default]
    Biased,
    /// Sample-adjusted `G1 = g1 * sqrt(n(n-1)) / (n-2)`; needs `n >= 3`.
    Adjusted,
}

/// Fisher–Pearson skewness `m3 / m2^(3/2)`.
pub fn skewness(v: &[f64]) -> Result<f64> {
    skewness_with(v, SkewnessEstimator::Biased)
}

pub fn skewness_with(v: &[f64], estimator: SkewnessEstimator) -> Result<f64> {
    let n = v.len();
    if n < 2 || (estimator == SkewnessEstimator::Adjusted && n < 3) {
        return Err(AttentionError::DegenerateVector);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(AttentionError::NonFinite);
    }
    let nf = n as f64;
    let mean = neumaier_sum(v.iter().copied()) / nf;
    let m2 = neumaier_sum(v.iter().map(|x| (x - mean).powi(2))) / nf;
    let m3 = neumaier_sum(v.iter().map(|x| (x - mean).powi(3))) / nf;
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m2 <= 0.0 || m2.sqrt() <= DEGENERATE_SPREAD * scale {
        return Err(AttentionError::DegenerateVector);
    }
    let g1 = m3 / m2.powf(1.5);
    Ok(match estimator {
        SkewnessEstimator::Biased => g1,
        SkewnessEstimator::Adjusted => g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0),
    })
}

/// Compensated (Neumaier) summation; the result does not depend on how the
/// caller batched the terms beyond last-bit rounding.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Skewness of every (layer, head) spectrum of one utterance, layer-major.
pub fn head_skewness(set: &AttentionTensorSet, estimator: SkewnessEstimator) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.layers * set.heads);
    for l in 0..set.layers {
        for h in 0..set.heads {
            let spectrum = eigen_spectrum(&set.map(l, h))?;
            out.push(skewness_with(&spectrum, estimator)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewnessReport {
    pub layers: usize,
    pub heads: usize,
    /// Score per utterance (mean skewness over its `L·H` maps).
    pub per_utterance: BTreeMap<String, f64>,
    /// Utterances with at least one constant spectrum; they contribute nothing.
    pub excluded: Vec<String>,
    /// Mean of `per_utterance`; `None` when every utterance was excluded.
    pub dataset_mean: Option<f64>,
    /// Mean skewness per `[layer][head]` over the included utterances.
    pub per_layer_head: Vec<Vec<f64>>,
}

/// Dataset skewness score over a collection of utterances.
///
/// Utterances are scored in parallel and reduced in input order with
/// compensated summation.
pub fn dataset_skewness(sets: &[AttentionTensorSet], estimator: SkewnessEstimator) -> Result<SkewnessReport> {
    let first = sets.first().ok_or(AttentionError::Empty)?;
    let (layers, heads) = (first.layers, first.heads);
    if let Some(bad) = sets.iter().find(|s| s.layers != layers || s.heads != heads) {
        return Err(AttentionError::InconsistentShape(format!(
            "{} has L={} H={}, expected L={layers} H={heads}",
            bad.utterance_id, bad.layers, bad.heads
        )));
    }
    let scored: Vec<Result<Vec<f64>>> = sets.par_iter().map(|s| head_skewness(s, estimator)).collect();

    let mut included: Vec<(&str, Vec<f64>)> = Vec::new();
    let mut excluded = Vec::new();
    for (set, result) in sets.iter().zip(scored) {
        match result {
            Ok(per_head) => included.push((&set.utterance_id, per_head)),
            Err(AttentionError::DegenerateVector) => {
                log::warn!("{}: constant eigen spectrum, utterance excluded", set.utterance_id);
                excluded.push(set.utterance_id.clone());
            }
            Err(e) => return Err(e),
        }
    }

    let maps = (layers * heads) as f64;
    let scores: Vec<f64> = included
        .iter()
        .map(|(_, per_head)| neumaier_sum(per_head.iter().copied()) / maps)
        .collect();
    let dataset_mean = (!scores.is_empty()).then(|| neumaier_sum(scores.iter().copied()) / scores.len() as f64);
    let per_layer_head = (0..layers)
        .map(|l| {
            (0..heads)
                .map(|h| {
                    let k = l * heads + h;
                    if included.is_empty() {
                        f64::NAN
                    } else {
                        neumaier_sum(included.iter().map(|(_, v)| v[k])) / included.len() as f64
                    }
                })
                .collect()
        })
        .collect();
    let per_utterance = included
        .iter()
        .zip(&scores)
        .map(|((id, _), s)| (id.to_string(), *s))
        .collect();

    Ok(SkewnessReport {
        layers,
        heads,
        per_utterance,
        excluded,
        dataset_mean,
        per_layer_head,
    })
}

/// `(S_m - S_p) / S_m`; undefined when the baseline is zero.
pub fn relative_drop(baseline: f64, candidate: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (baseline - candidate) / baseline)
}

pub fn encode_attention(set: &AttentionTensorSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * set.data.len());
    out.extend_from_slice(ATTENTION_MAGIC);
    for v in [ATTENTION_VERSION, set.layers as u32, set.heads as u32, set.size as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &set.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_attention(bytes: &[u8], utterance_id: impl Into<String>) -> Result<AttentionTensorSet> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != ATTENTION_MAGIC {
        return Err(AttentionError::MalformedHeader("missing PMCTATTN header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != ATTENTION_VERSION as usize {
        return Err(AttentionError::MalformedHeader(format!(
            "unsupported version {}",
            word(0)
        )));
    }
    let (layers, heads, size) = (word(1), word(2), word(3));
    let expected = layers
        .checked_mul(heads)
        .and_then(|n| n.checked_mul(size))
        .and_then(|n| n.checked_mul(size))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| AttentionError::MalformedHeader("dimension overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(AttentionError::MalformedHeader(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    AttentionTensorSet::new(utterance_id, layers, heads, size, data)
}

/// Write `set` to `dir/<utterance id>`.
pub fn write_attention(set: &AttentionTensorSet, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let path = dir.as_ref().join(&set.utterance_id);
    let io_err = |source| AttentionError::Io {
        path: path.clone(),
        source,
    };
    File::create(&path)
        .and_then(|mut f| f.write_all(&encode_attention(set)))
        .map_err(io_err)?;
    Ok(path)
}

pub fn read_attention(path: impl AsRef<Path>) -> Result<AttentionTensorSet> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| AttentionError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let id = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_attention(&bytes, id)
}

/// Every regular, non-hidden file in `dir`, sorted by name.
pub fn read_attention_dir(dir: impl AsRef<Path>) -> Result<Vec<AttentionTensorSet>> {
    let dir = dir.as_ref();
    let io_err = |source| AttentionError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.file_type().map_err(io_err)?.is_file() && !hidden {
            paths.push(entry.path());
        }
    }
    paths.sort();
    paths.iter().map(read_attention).collect()
}
