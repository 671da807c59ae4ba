//! Manifests, resource pools and per-utterance seeding.
//!
//! Each utterance gets its own generator, seeded by XXH64 (seed 0) of the
//! UTF-8 string `"{global_seed}\x1f{id}\x1f{epoch}"` with both numbers in
//! decimal. Results therefore never depend on processing order.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use twox_hash::XxHash64;

use crate::mamp::SnrRange;
use crate::rng::AugRng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("{0} pool is empty")]
    EmptyPool(PoolKind),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse a JSON-lines manifest. Blank lines are skipped; line numbers are 1-based.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&read(path.as_ref())?)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut seen = HashMap::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        if entry.id.is_empty() {
            return Err(CorpusError::Parse {
                line,
                message: "empty id".into(),
            });
        }
        if entry.audio_path.as_os_str().is_empty() {
            return Err(CorpusError::Parse {
                line,
                message: "empty audio_path".into(),
            });
        }
        if seen.insert(entry.id.clone(), line).is_some() {
            return Err(CorpusError::DuplicateId { line, id: entry.id });
        }
        entries.push(entry);
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Rir,
    Noise,
}

impl std::fmt::Display for PoolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolKind::Rir => "rir",
            PoolKind::Noise => "noise",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourcePool {
    pub kind: PoolKind,
    pub entries: Vec<PoolEntry>,
}

impl ResourcePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<&PoolEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Load a pool list: one `id<TAB>path` per line, `#` comments and blank lines ignored.
pub fn load_pool(path: impl AsRef<Path>, kind: PoolKind) -> Result<ResourcePool> {
    parse_pool(&read(path.as_ref())?, kind)
}

pub fn parse_pool(text: &str, kind: PoolKind) -> Result<ResourcePool> {
    let mut seen = HashMap::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let (id, path) = raw.split_once('\t').ok_or_else(|| CorpusError::Parse {
            line,
            message: "expected id<TAB>path".into(),
        })?;
        let (id, path) = (id.trim(), path.trim());
        if id.is_empty() || path.is_empty() {
            return Err(CorpusError::Parse {
                line,
                message: "empty id or path".into(),
            });
        }
        if seen.insert(id.to_string(), line).is_some() {
            return Err(CorpusError::DuplicateId {
                line,
                id: id.to_string(),
            });
        }
        entries.push(PoolEntry {
            id: id.to_string(),
            path: PathBuf::from(path),
        });
    }
    Ok(ResourcePool { kind, entries })
}

/// Relative paths are taken against `root`; absolute paths pass through.
pub fn resolve(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedScheme {
    pub global_seed: u64,
}

impl SeedScheme {
    pub fn new(global_seed: u64) -> Self {
        Self { global_seed }
    }

    pub fn derive(&self, utterance_id: &str, epoch: u64) -> u64 {
        let key = format!("{}\u{1f}{}\u{1f}{}", self.global_seed, utterance_id, epoch);
        XxHash64::oneshot(0, key.as_bytes())
    }

    pub fn generator(&self, utterance_id: &str, epoch: u64) -> AugRng {
        AugRng::from_seed(self.derive(utterance_id, epoch))
    }
}

/// Resources drawn for one utterance, plus the generator positioned after the draws.
#[derive(Debug, Clone)]
pub struct ResourceDraw {
    pub rir: PoolEntry,
    pub noise: PoolEntry,
    pub snr_db: f64,
    pub rng: AugRng,
}

/// Draw RIR index, noise index and SNR (in that order) from the utterance's generator.
pub fn sample_resources(
    entry: &ManifestEntry,
    rirs: &ResourcePool,
    noises: &ResourcePool,
    snr_range: SnrRange,
    seed: SeedScheme,
    epoch: u64,
) -> Result<ResourceDraw> {
    for pool in [rirs, noises] {
        if pool.is_empty() {
            return Err(CorpusError::EmptyPool(pool.kind));
        }
    }
    let mut rng = seed.generator(&entry.id, epoch);
    let rir = rirs.entries[rng.index(rirs.len())].clone();
    let noise = noises.entries[rng.index(noises.len())].clone();
    let snr_db = snr_range.draw(&mut rng);
    Ok(ResourceDraw {
        rir,
        noise,
        snr_db,
        rng,
    })
}
