use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::config::{ConfigError, Mode, RunConfig};
use super::pipeline::{Augmenter, PipelineError, Provenance};
use crate::attention_metrics::{self, AttentionError, SkewnessReport};
use crate::audio_io::{self, atomic_write, AudioBuffer, RatePolicy, WavEncoding};
use crate::corpus::{self, CorpusError, ManifestEntry};
use crate::dsp::{self, SnrSpec};
use crate::mamp::PatchSource;

pub const PROVENANCE_FILE: &str = "provenance.jsonl";

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error("mismatch found in {} utterance(s): {}", .0.len(), .0.join(", "))]
    MismatchFound(Vec<String>),
}

impl CommandError {
    /// 2 for configuration problems, 1 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct AugmentSummary {
    pub succeeded: usize,
    pub failed: Vec<(String, String)>,
    /// Output samples outside `[-1, 1]`.
    pub out_of_range: usize,
    /// Stopped early because of `--fail-fast`.
    pub aborted: bool,
}

impl AugmentSummary {
    pub fn exit_code(&self) -> i32 {
        if self.aborted || (!self.failed.is_empty() && self.succeeded == 0) {
            1
        } else {
            0
        }
    }
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> CommandError {
    CommandError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn load_manifest(config: &RunConfig) -> Result<Vec<ManifestEntry>, CommandError> {
    let path = config.manifest.as_ref().ok_or(ConfigError::Missing("--manifest"))?;
    Ok(corpus::load_manifest(path)?)
}

fn out_dir(config: &RunConfig) -> Result<&Path, ConfigError> {
    config.out.as_deref().ok_or(ConfigError::Missing("--out"))
}

/// Augment every manifest entry and write `<id>.wav` / `<id>.feat` plus the provenance sidecar.
pub fn cmd_augment(config: &RunConfig) -> Result<AugmentSummary, CommandError> {
    run_batch(config, true)
}

/// Feature extraction only: clean audio, optional SpecAugment, no sidecar.
pub fn cmd_features(config: &RunConfig) -> Result<AugmentSummary, CommandError> {
    let config = RunConfig {
        mode: Mode::Clean,
        output_kind: super::config::OutputKind::Features,
        ..config.clone()
    };
    run_batch(&config, false)
}

struct Written {
    provenance: Provenance,
    out_of_range: usize,
}

fn run_batch(config: &RunConfig, sidecar: bool) -> Result<AugmentSummary, CommandError> {
    config.validate_for_run()?;
    let manifest = load_manifest(config)?;
    let out = out_dir(config)?;
    if manifest.is_empty() {
        log::warn!("manifest is empty, nothing to do");
        return Ok(AugmentSummary::default());
    }
    let augmenter = Augmenter::new(config.clone())?;
    fs::create_dir_all(out).map_err(|e| output_err(out, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let abort = AtomicBool::new(false);
    let results: Vec<Option<Result<Written, PipelineError>>> = pool.install(|| {
        manifest
            .par_iter()
            .map(|entry| {
                if abort.load(Ordering::SeqCst) {
                    return None;
                }
                let result = process_and_write(&augmenter, entry, out);
                if result.is_err() && config.fail_fast {
                    abort.store(true, Ordering::SeqCst);
                }
                Some(result)
            })
            .collect()
    });

    let mut summary = AugmentSummary {
        aborted: abort.load(Ordering::SeqCst),
        ..Default::default()
    };
    let mut records = Vec::new();
    for (entry, result) in manifest.iter().zip(results) {
        match result {
            Some(Ok(w)) => {
                summary.succeeded += 1;
                summary.out_of_range += w.out_of_range;
                records.push(w.provenance);
            }
            Some(Err(e)) => {
                eprintln!("error: {}: {e}", entry.id);
                summary.failed.push((entry.id.clone(), e.to_string()));
            }
            None => {}
        }
    }
    if sidecar {
        write_provenance(&out.join(PROVENANCE_FILE), &records)?;
    }
    Ok(summary)
}

fn process_and_write(augmenter: &Augmenter, entry: &ManifestEntry, out: &Path) -> Result<Written, PipelineError> {
    let output = augmenter.process_entry(entry)?;
    let kind = augmenter.config().output_kind;
    if kind.wav() {
        audio_io::save_wav(
            &output.audio,
            out.join(format!("{}.wav", entry.id)),
            WavEncoding::Float32,
        )?;
    }
    if let Some(features) = &output.features {
        audio_io::write_features(features, out.join(format!("{}.feat", entry.id)))?;
    }
    let out_of_range = output.audio.samples.iter().filter(|s| s.abs() > 1.0).count();
    Ok(Written {
        provenance: output.provenance,
        out_of_range,
    })
}

pub fn write_provenance(path: &Path, records: &[Provenance]) -> Result<(), CommandError> {
    let mut text = String::new();
    for r in records {
        text += &serde_json::to_string(r).map_err(|e| output_err(path, e))?;
        text.push('\n');
    }
    atomic_write(path, |mut w| {
        w.write_all(text.as_bytes())?;
        w.flush()
    })
    .map_err(|e| output_err(path, e))
}

pub fn read_provenance(path: &Path) -> Result<Vec<Provenance>, CommandError> {
    let text = fs::read_to_string(path).map_err(|e| output_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                CommandError::Corpus(CorpusError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrCheck {
    pub id: String,
    pub recorded_db: f64,
    pub measured_db: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub mismatches: Vec<String>,
    pub snr: Vec<SnrCheck>,
}

impl VerifyReport {
    pub fn max_snr_error(&self) -> f64 {
        self.snr
            .iter()
            .map(|c| (c.measured_db - c.recorded_db).abs())
            .fold(0.0, f64::max)
    }
}

/// Largest tolerated gap between recorded and re-measured SNR.
pub const SNR_TOLERANCE_DB: f64 = 1e-6;

/// Rebuild every output from its provenance record and compare bit for bit.
pub fn cmd_verify(config: &RunConfig) -> Result<VerifyReport, CommandError> {
    config.validate_for_run()?;
    let manifest = load_manifest(config)?;
    let out = out_dir(config)?;
    let augmenter = Augmenter::new(config.clone())?;
    let records: HashMap<String, Provenance> = read_provenance(&out.join(PROVENANCE_FILE))?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();

    let checks: Vec<(String, Result<Option<f64>, String>)> = manifest
        .par_iter()
        .map(|entry| {
            let result = match records.get(&entry.id) {
                Some(record) => verify_one(&augmenter, entry, record, out),
                None => Err("no provenance record".to_string()),
            };
            (entry.id.clone(), result)
        })
        .collect();

    let mut report = VerifyReport::default();
    for ((id, result), entry) in checks.into_iter().zip(&manifest) {
        report.checked += 1;
        match result {
            Ok(Some(measured_db)) => {
                let recorded_db = records[&entry.id].snr_db.unwrap_or(f64::NAN);
                let within = (measured_db - recorded_db).abs() <= SNR_TOLERANCE_DB;
                if !within {
                    eprintln!("mismatch: {id}: measured SNR {measured_db} dB, recorded {recorded_db} dB");
                    report.mismatches.push(id.clone());
                }
                report.snr.push(SnrCheck {
                    id,
                    recorded_db,
                    measured_db,
                });
            }
            Ok(None) => {}
            Err(why) => {
                eprintln!("mismatch: {id}: {why}");
                report.mismatches.push(id);
            }
        }
    }
    Ok(report)
}

/// Returns the re-measured SNR when noise was added.
fn verify_one(
    augmenter: &Augmenter,
    entry: &ManifestEntry,
    record: &Provenance,
    out: &Path,
) -> Result<Option<f64>, String> {
    let config = augmenter.config();
    if record.mode != config.mode {
        return Err(format!("recorded mode {:?}, configured {:?}", record.mode, config.mode));
    }
    let x = augmenter.load_utterance(entry).map_err(|e| e.to_string())?;
    let (expected, measured) = rebuild(augmenter, &x, record)?;

    if config.output_kind.wav() {
        let path = out.join(format!("{}.wav", entry.id));
        let stored = audio_io::load_wav(&path, RatePolicy::Any).map_err(|e| e.to_string())?;
        let same = stored.samples.len() == expected.len()
            && stored
                .samples
                .iter()
                .zip(&expected)
                .all(|(s, e)| (*s as f32).to_bits() == (*e as f32).to_bits());
        if !same {
            return Err(format!("{} differs from its reconstruction", path.display()));
        }
    }
    if config.output_kind.features() {
        let path = out.join(format!("{}.feat", entry.id));
        let stored = audio_io::read_features(&path).map_err(|e| e.to_string())?;
        let replay = augmenter.process_entry(entry).map_err(|e| e.to_string())?;
        let fresh = replay.features.expect("feature output configured");
        let same = stored.frames() == fresh.frames()
            && stored.bins() == fresh.bins()
            && stored
                .as_slice()
                .iter()
                .zip(fresh.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(format!("{} differs from its replay", path.display()));
        }
    }
    Ok(measured)
}

/// Reconstruct an output from the provenance record alone (no generator replay).
fn rebuild(augmenter: &Augmenter, x: &AudioBuffer, record: &Provenance) -> Result<(Vec<f64>, Option<f64>), String> {
    let err = |e: PipelineError| e.to_string();
    if record.mode == Mode::Clean {
        return Ok((x.samples.clone(), None));
    }
    let missing = |field: &str| format!("provenance lacks {field}");
    let rir_id = record.rir_id.as_deref().ok_or_else(|| missing("rir_id"))?;
    let noise_id = record.noise_id.as_deref().ok_or_else(|| missing("noise_id"))?;
    let snr_db = record.snr_db.ok_or_else(|| missing("snr_db"))?;
    let reverb = record.reverb_applied.ok_or_else(|| missing("reverb_applied"))?;
    let add_noise = record.noise_applied.ok_or_else(|| missing("noise_applied"))?;
    let offset = record.noise_offset.ok_or_else(|| missing("noise_offset"))?;

    let y = if reverb {
        dsp::apply_rir(x, &augmenter.load_rir(rir_id).map_err(err)?).map_err(|e| e.to_string())?
    } else {
        x.clone()
    };
    let (distorted, measured) = if add_noise {
        let noise = augmenter.load_noise(noise_id).map_err(err)?;
        let snr = SnrSpec::new(snr_db).map_err(|e| e.to_string())?;
        let mix = dsp::mix_noise_at_offset(&y, &noise, snr, offset).map_err(|e| e.to_string())?;
        let scaled: Vec<f64> = dsp::aligned_noise(&noise.samples, y.len(), offset)
            .iter()
            .map(|n| mix.gain * n)
            .collect();
        let measured = 10.0 * (dsp::mean_power(&y.samples) / dsp::mean_power(&scaled)).log10();
        (mix.mixed.samples, Some(measured))
    } else {
        (y.samples, None)
    };

    if record.mode == Mode::Mct {
        return Ok((distorted, measured));
    }
    let patch_len = record.patch_len.ok_or_else(|| missing("patch_len"))?;
    if patch_len == 0 || record.sources.len() != x.len().div_ceil(patch_len) {
        return Err("patch layout does not cover the utterance".into());
    }
    let z = record
        .sources
        .iter()
        .enumerate()
        .flat_map(|(p, source)| {
            let range = p * patch_len..((p + 1) * patch_len).min(x.len());
            match source {
                PatchSource::Clean => x.samples[range].to_vec(),
                PatchSource::Distorted => distorted[range].to_vec(),
            }
        })
        .collect();
    Ok((z, measured))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSkewness {
    pub dir: PathBuf,
    pub report: SkewnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttnSkewReport {
    pub models: Vec<ModelSkewness>,
    /// `(S_baseline - S_candidate) / S_baseline`, when two models are given.
    pub relative_drop: Option<f64>,
}

impl AttnSkewReport {
    pub fn to_text(&self) -> String {
        let mut text = String::new();
        for (i, m) in self.models.iter().enumerate() {
            let role = if i == 0 { "baseline" } else { "candidate" };
            let score = m
                .report
                .dataset_mean
                .map_or_else(|| "undefined".to_string(), |s| format!("{s:.6}"));
            text += &format!(
                "{role} {}: S = {score} over {} utterance(s), {} excluded (L={}, H={})\n",
                m.dir.display(),
                m.report.per_utterance.len(),
                m.report.excluded.len(),
                m.report.layers,
                m.report.heads
            );
        }
        if let Some(drop) = self.relative_drop {
            text += &format!("relative drop: {drop:.6}\n");
        }
        text
    }
}

/// Skewness score for one or two directories of attention tensors.
/// The first directory is the baseline.
pub fn cmd_attn_skew(config: &RunConfig, dirs: &[PathBuf]) -> Result<AttnSkewReport, CommandError> {
    if dirs.is_empty() || dirs.len() > 2 {
        return Err(ConfigError::Invalid(format!("attn-skew takes one or two directories, got {}", dirs.len())).into());
    }
    let mut models = Vec::new();
    for dir in dirs {
        if !dir.is_dir() {
            return Err(ConfigError::NotFound {
                what: "attention directory",
                path: dir.clone(),
            }
            .into());
        }
        let sets = attention_metrics::read_attention_dir(dir)?;
        let report = attention_metrics::dataset_skewness(&sets, config.skewness)?;
        models.push(ModelSkewness {
            dir: dir.clone(),
            report,
        });
    }
    let relative_drop = match models.as_slice() {
        [a, b] => match (a.report.dataset_mean, b.report.dataset_mean) {
            (Some(sm), Some(sp)) => attention_metrics::relative_drop(sm, sp),
            _ => None,
        },
        _ => None,
    };
    Ok(AttnSkewReport { models, relative_drop })
}
