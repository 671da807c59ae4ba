//! Run configuration: built-in defaults, then a flat `key = value` file, then flags.
//!
//! ```text
//! # comment
//! mode = pmct
//! pi = 0.5
//! patch-len = 1.0
//! specaugment = mid
//! specaugment.freq-mask-max = 27
//! ```
//!
//! Keys match the long flag names. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention_metrics::SkewnessEstimator;
use crate::dsp::MelConfig;
use crate::mamp::{MampConfig, MctConfig, PiMode, SnrRange};
use crate::specaugment::{derive_policy, Level, MaskValue, SpecAugmentPolicy};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {message}")]
    Value { key: String, message: String },
    #[error("missing required setting: {0}")]
    Missing(&'static str),
    #[error("{what} does not exist: {path}")]
    NotFound { what: &'static str, path: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pmct,
    Mct,
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputKind {
    Wav,
    Features,
    Both,
}

impl OutputKind {
    pub fn wav(self) -> bool {
        matches!(self, OutputKind::Wav | OutputKind::Both)
    }

    pub fn features(self) -> bool {
        matches!(self, OutputKind::Features | OutputKind::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub mamp: MampConfig,
    pub mct: MctConfig,
    /// `None` disables SpecAugment.
    pub specaugment: Option<Level>,
    /// Full-strength policy that Mid and Low are derived from.
    pub specaugment_base: SpecAugmentPolicy,
    pub mel: MelConfig,
    pub skewness: SkewnessEstimator,
    pub manifest: Option<PathBuf>,
    pub rir_list: Option<PathBuf>,
    pub noise_list: Option<PathBuf>,
    pub root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub epoch: u64,
    pub output_kind: OutputKind,
    pub workers: usize,
    pub fail_fast: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pmct,
            mamp: MampConfig::default(),
            mct: MctConfig::default(),
            specaugment: None,
            specaugment_base: SpecAugmentPolicy::default(),
            mel: MelConfig::default(),
            skewness: SkewnessEstimator::Biased,
            manifest: None,
            rir_list: None,
            noise_list: None,
            root: None,
            out: None,
            seed: 0,
            epoch: 0,
            output_kind: OutputKind::Wav,
            workers: 1,
            fail_fast: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn parse_enum<T: ValueEnum>(key: &str, value: &str) -> Result<T, ConfigError> {
    T::from_str(value, true).map_err(|message| ConfigError::Value {
        key: key.to_string(),
        message,
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.into(),
            message: format!("expected a boolean, got {value:?}"),
        }),
    }
}

/// `off` or a SpecAugment level.
pub fn parse_specaugment(value: &str) -> Result<Option<Level>, ConfigError> {
    if value.eq_ignore_ascii_case("off") {
        return Ok(None);
    }
    value.parse().map(Some).map_err(|message| ConfigError::Value {
        key: "specaugment".into(),
        message,
    })
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_file(path.as_ref())?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        self.apply_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            let value = value.trim().trim_matches('"');
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Set one setting by its flag name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let snr = |cfg: &Self| cfg.mamp.snr_range_db;
        match key {
            "mode" => self.mode = parse_enum(key, value)?,
            "manifest" => self.manifest = Some(value.into()),
            "rir-list" => self.rir_list = Some(value.into()),
            "noise-list" => self.noise_list = Some(value.into()),
            "root" => self.root = Some(value.into()),
            "out" => self.out = Some(value.into()),
            "seed" => self.seed = parse(key, value)?,
            "epoch" => self.epoch = parse(key, value)?,
            "pi" => self.mamp.pi_clean = parse::<PiMode>(key, value)?,
            "patch-len" => self.mamp.patch_len_s = parse(key, value)?,
            "p-reverb" => self.mct.p_reverb = parse(key, value)?,
            "p-noise" => self.mct.p_noise = parse(key, value)?,
            "snr-lo" => self.set_snr(parse(key, value)?, snr(self).hi),
            "snr-hi" => self.set_snr(snr(self).lo, parse(key, value)?),
            "specaugment" => self.specaugment = parse_specaugment(value)?,
            "output-kind" => self.output_kind = parse_enum(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "fail-fast" => self.fail_fast = parse_bool(key, value)?,
            "skewness" => {
                self.skewness = match value {
                    "biased" | "g1" => SkewnessEstimator::Biased,
                    "adjusted" | "G1" => SkewnessEstimator::Adjusted,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            message: format!("expected biased or adjusted, got {value:?}"),
                        })
                    }
                }
            }
            "specaugment.n-freq-masks" => self.specaugment_base.n_freq_masks = parse(key, value)?,
            "specaugment.freq-mask-max" => self.specaugment_base.freq_mask_max = parse(key, value)?,
            "specaugment.time-mask-ratio" => self.specaugment_base.time_mask_ratio = parse(key, value)?,
            "specaugment.time-mask-max-ratio" => self.specaugment_base.time_mask_max_ratio = parse(key, value)?,
            "specaugment.mask-value" => {
                self.specaugment_base.mask_value = match value {
                    "zero" => MaskValue::Zero,
                    "mean" => MaskValue::Mean,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            message: format!("expected zero or mean, got {value:?}"),
                        })
                    }
                }
            }
            "mel.frame-length-ms" => self.mel.frame_length_ms = parse(key, value)?,
            "mel.frame-shift-ms" => self.mel.frame_shift_ms = parse(key, value)?,
            "mel.n-mels" => self.mel.n_mels = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    fn set_snr(&mut self, lo: f64, hi: f64) {
        let range = SnrRange { lo, hi };
        self.mamp.snr_range_db = range;
        self.mct.snr_range_db = range;
    }

    /// Effective SpecAugment policy, if enabled.
    pub fn specaugment_policy(&self) -> Option<SpecAugmentPolicy> {
        self.specaugment
            .map(|level| derive_policy(&self.specaugment_base, level))
    }

    pub fn snr_range(&self) -> SnrRange {
        self.mamp.snr_range_db
    }

    /// Value checks that do not touch the filesystem.
    pub fn validate_values(&self) -> Result<(), ConfigError> {
        let invalid = |e: crate::mamp::MampError| ConfigError::Invalid(e.to_string());
        self.mamp.validate().map_err(invalid)?;
        self.mct.validate().map_err(invalid)?;
        self.specaugment_base.validate().map_err(ConfigError::Invalid)?;
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.mel.frame_length_ms == 0 || self.mel.frame_shift_ms == 0 || self.mel.n_mels == 0 {
            return Err(ConfigError::Invalid(
                "mel frame, shift and bin count must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Full validation for commands that read a manifest.
    pub fn validate_for_run(&self) -> Result<(), ConfigError> {
        self.validate_values()?;
        let manifest = self.manifest.as_ref().ok_or(ConfigError::Missing("--manifest"))?;
        exists("manifest", manifest)?;
        self.out.as_ref().ok_or(ConfigError::Missing("--out"))?;
        if let Some(root) = &self.root {
            exists("root", root)?;
        }
        if self.mode != Mode::Clean {
            exists(
                "rir list",
                self.rir_list.as_ref().ok_or(ConfigError::Missing("--rir-list"))?,
            )?;
            exists(
                "noise list",
                self.noise_list.as_ref().ok_or(ConfigError::Missing("--noise-list"))?,
            )?;
        }
        Ok(())
    }
}

fn exists(what: &'static str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::NotFound {
            what,
            path: path.to_path_buf(),
        })
    }
}
