//! Per-utterance processing shared by the CLI commands and host-language bindings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, Mode, RunConfig};
use crate::audio_io::{self, AudioBuffer, AudioIoError, FeatureMatrix, RatePolicy, OPERATING_RATE};
use crate::corpus::{self, CorpusError, ManifestEntry, PoolKind, ResourcePool, SeedScheme};
use crate::dsp::{self, DspError, ImpulseResponse};
use crate::mamp::{self, MampConfig, MampError, MctConfig, PatchSource, SnrRange};
use crate::rng::AugRng;
use crate::specaugment;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Audio(#[from] AudioIoError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Mamp(#[from] MampError),
    #[error("utterance id {0:?} cannot be used as a file name")]
    BadId(String),
    #[error("{kind} {id:?} not in pool")]
    UnknownResource { kind: PoolKind, id: String },
}

impl PipelineError {
    /// Stable error code for foreign callers.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Audio(AudioIoError::FileNotFound(_)) => "file_not_found",
            PipelineError::Audio(AudioIoError::UnsupportedFormat { .. }) => "unsupported_format",
            PipelineError::Audio(AudioIoError::SampleRateMismatch { .. }) => "sample_rate_mismatch",
            PipelineError::Audio(_) => "io",
            PipelineError::Corpus(CorpusError::EmptyPool(_)) => "empty_pool",
            PipelineError::Corpus(_) => "corpus",
            PipelineError::Dsp(DspError::SilentNoise) | PipelineError::Mamp(MampError::Dsp(DspError::SilentNoise)) => {
                "silent_noise"
            }
            PipelineError::Dsp(_) | PipelineError::Mamp(_) => "dsp",
            PipelineError::BadId(_) => "bad_id",
            PipelineError::UnknownResource { .. } => "unknown_resource",
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// One JSON-lines record of the provenance sidecar.
///
/// `id`, `rir_id`, `noise_id`, `snr_db`, `pi_effective`, `patch_len` and
/// `sources` describe the augmentation; the remaining fields record the
/// decisions needed to rebuild the output without replaying the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub mode: Mode,
    pub rir_id: Option<String>,
    pub noise_id: Option<String>,
    pub snr_db: Option<f64>,
    pub pi_effective: Option<f64>,
    pub patch_len: Option<usize>,
    pub sources: Vec<PatchSource>,
    pub reverb_applied: Option<bool>,
    pub noise_applied: Option<bool>,
    pub noise_offset: Option<usize>,
}

impl Provenance {
    fn clean(id: &str) -> Self {
        Self {
            id: id.to_string(),
            mode: Mode::Clean,
            rir_id: None,
            noise_id: None,
            snr_db: None,
            pi_effective: None,
            patch_len: None,
            sources: Vec::new(),
            reverb_applied: None,
            noise_applied: None,
            noise_offset: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UtteranceOutput {
    pub audio: AudioBuffer,
    pub features: Option<FeatureMatrix>,
    pub provenance: Provenance,
}

/// Ids become file names; reject anything that could escape the output directory.
pub fn check_id(id: &str) -> Result<()> {
    let bad = id.is_empty() || id.starts_with('.') || id.contains(['/', '\\', '\0']);
    if bad {
        Err(PipelineError::BadId(id.to_string()))
    } else {
        Ok(())
    }
}

/// Immutable, validated configuration plus loaded resource pools.
///
/// All methods take `&self` and are safe to call from many threads.
#[derive(Debug, Clone)]
pub struct Augmenter {
    config: RunConfig,
    rirs: Option<ResourcePool>,
    noises: Option<ResourcePool>,
}

impl Augmenter {
    /// Validate `config` and load its pools. A manifest is not required.
    pub fn new(config: RunConfig) -> std::result::Result<Self, ConfigError> {
        config.validate_values()?;
        let load = |path: &Option<PathBuf>, kind, flag| -> std::result::Result<ResourcePool, ConfigError> {
            let path = path.as_ref().ok_or(ConfigError::Missing(flag))?;
            let pool = corpus::load_pool(path, kind).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if pool.is_empty() {
                return Err(ConfigError::Invalid(format!("{kind} pool {} is empty", path.display())));
            }
            Ok(pool)
        };
        let (rirs, noises) = if config.mode == Mode::Clean {
            (None, None)
        } else {
            (
                Some(load(&config.rir_list, PoolKind::Rir, "--rir-list")?),
                Some(load(&config.noise_list, PoolKind::Noise, "--noise-list")?),
            )
        };
        Ok(Self { config, rirs, noises })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn seed_scheme(&self) -> SeedScheme {
        SeedScheme::new(self.config.seed)
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        corpus::resolve(self.config.root.as_deref(), path)
    }

    fn pool(&self, kind: PoolKind) -> &ResourcePool {
        let pool = match kind {
            PoolKind::Rir => &self.rirs,
            PoolKind::Noise => &self.noises,
        };
        pool.as_ref().expect("pools are loaded for augmenting modes")
    }

    /// Load a RIR by pool id.
    pub fn load_rir(&self, id: &str) -> Result<ImpulseResponse> {
        let entry = self
            .pool(PoolKind::Rir)
            .find(id)
            .ok_or_else(|| PipelineError::UnknownResource {
                kind: PoolKind::Rir,
                id: id.to_string(),
            })?;
        let audio = audio_io::load_wav(self.resolve(&entry.path), RatePolicy::Strict)?;
        Ok(ImpulseResponse::new(&entry.id, audio.samples)?)
    }

    /// Load a noise clip by pool id.
    pub fn load_noise(&self, id: &str) -> Result<AudioBuffer> {
        let entry = self
            .pool(PoolKind::Noise)
            .find(id)
            .ok_or_else(|| PipelineError::UnknownResource {
                kind: PoolKind::Noise,
                id: id.to_string(),
            })?;
        let mut audio = audio_io::load_wav(self.resolve(&entry.path), RatePolicy::Strict)?;
        audio.id = entry.id.clone();
        Ok(audio)
    }

    /// Load the utterance audio for a manifest entry at the operating rate.
    pub fn load_utterance(&self, entry: &ManifestEntry) -> Result<AudioBuffer> {
        let mut x = audio_io::load_wav(self.resolve(&entry.audio_path), RatePolicy::Strict)?;
        x.id = entry.id.clone();
        Ok(x)
    }

    /// Augment one utterance; returns the output signal, the provenance
    /// record and the generator positioned for any feature-level draws.
    pub fn augment_buffer(&self, x: &AudioBuffer, epoch: u64) -> Result<(AudioBuffer, Provenance, AugRng)> {
        check_id(&x.id)?;
        if x.is_empty() {
            return Err(DspError::EmptyInput.into());
        }
        if x.sample_rate != OPERATING_RATE {
            return Err(DspError::RateMismatch(x.sample_rate, OPERATING_RATE).into());
        }
        let seed = self.seed_scheme();
        let mode = self.config.mode;
        if mode == Mode::Clean {
            return Ok((x.clone(), Provenance::clean(&x.id), seed.generator(&x.id, epoch)));
        }

        let entry = ManifestEntry {
            id: x.id.clone(),
            audio_path: PathBuf::new(),
            transcript: None,
            duration_s: None,
        };
        let draw = corpus::sample_resources(
            &entry,
            self.pool(PoolKind::Rir),
            self.pool(PoolKind::Noise),
            self.config.snr_range(),
            seed,
            epoch,
        )?;
        let mut rng = draw.rng;
        let h = self.load_rir(&draw.rir.id)?;
        let noise = self.load_noise(&draw.noise.id)?;
        // the SNR was drawn with the resources; the augmenter's own draw is pinned to it
        let snr = SnrRange::fixed(draw.snr_db);

        let (audio, provenance) = match mode {
            Mode::Pmct => {
                let cfg = MampConfig {
                    snr_range_db: snr,
                    ..self.config.mamp.clone()
                };
                let out = mamp::augment_pmct(x, &h, &noise, &cfg, &mut rng)?;
                let provenance = Provenance {
                    id: x.id.clone(),
                    mode,
                    rir_id: Some(h.id.clone()),
                    noise_id: Some(noise.id.clone()),
                    snr_db: Some(out.distorted.snr_db),
                    pi_effective: Some(out.pi_effective),
                    patch_len: Some(out.patch_len),
                    sources: out.plan.sources.clone(),
                    reverb_applied: Some(out.distorted.reverb_applied),
                    noise_applied: Some(out.distorted.noise_applied),
                    noise_offset: Some(out.distorted.noise_offset),
                };
                (out.audio, provenance)
            }
            Mode::Mct => {
                let cfg = MctConfig {
                    snr_range_db: snr,
                    ..self.config.mct.clone()
                };
                let out = mamp::augment_mct(x, &h, &noise, &cfg, &mut rng)?;
                let provenance = Provenance {
                    id: x.id.clone(),
                    mode,
                    rir_id: Some(h.id.clone()),
                    noise_id: Some(noise.id.clone()),
                    snr_db: Some(out.snr_db),
                    pi_effective: None,
                    patch_len: None,
                    sources: Vec::new(),
                    reverb_applied: Some(out.reverb_applied),
                    noise_applied: Some(out.noise_applied),
                    noise_offset: Some(out.noise_offset),
                };
                (out.audio, provenance)
            }
            Mode::Clean => unreachable!(),
        };
        Ok((audio, provenance, rng))
    }

    /// Log-mel features of `x`, masked with SpecAugment when enabled.
    pub fn features_for(&self, x: &AudioBuffer, rng: &mut AugRng) -> Result<FeatureMatrix> {
        let m = dsp::log_mel_features(x, &self.config.mel)?;
        Ok(match self.config.specaugment_policy() {
            Some(policy) => specaugment::apply_specaugment(&m, &policy, rng),
            None => m,
        })
    }

    /// Full per-utterance pipeline for an in-memory signal.
    pub fn process_buffer(&self, x: &AudioBuffer, epoch: u64) -> Result<UtteranceOutput> {
        let (audio, provenance, mut rng) = self.augment_buffer(x, epoch)?;
        let features = if self.config.output_kind.features() {
            Some(self.features_for(&audio, &mut rng)?)
        } else {
            None
        };
        Ok(UtteranceOutput {
            audio,
            features,
            provenance,
        })
    }

    pub fn process_entry(&self, entry: &ManifestEntry) -> Result<UtteranceOutput> {
        check_id(&entry.id)?;
        let x = self.load_utterance(entry)?;
        self.process_buffer(&x, self.config.epoch)
    }

    /// Augment raw samples at the operating rate.
    pub fn augment_utterance(&self, samples: &[f64], id: &str, epoch: u64) -> Result<(Vec<f64>, Provenance)> {
        let x = AudioBuffer::new(id, samples.to_vec(), OPERATING_RATE)?;
        let (audio, provenance, _) = self.augment_buffer(&x, epoch)?;
        Ok((audio.samples, provenance))
    }

    /// Features of raw samples without waveform augmentation, as the
    /// `features` command computes them.
    pub fn extract_features(&self, samples: &[f64], id: &str, epoch: u64) -> Result<FeatureMatrix> {
        check_id(id)?;
        let x = AudioBuffer::new(id, samples.to_vec(), OPERATING_RATE)?;
        let mut rng = self.seed_scheme().generator(id, epoch);
        self.features_for(&x, &mut rng)
    }
}
