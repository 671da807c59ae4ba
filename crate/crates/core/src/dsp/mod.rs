//! Signal-processing kernels: RIR convolution with direct-path alignment,
//! SNR-controlled noise mixing and the log-mel frontend.

mod convolve;
mod mel;
mod noise;

pub use convolve::{apply_rir, convolve, convolve_direct, convolve_fft, DIRECT_MAX_TAPS};
pub use mel::{hz_to_mel, log_mel_features, mel_center_frequencies, mel_to_hz, MelConfig, LOG_FLOOR};
pub use noise::{aligned_noise, mean_power, mix_noise_at_offset, mix_noise_at_snr, NoiseMix};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("impulse response has no taps")]
    EmptyImpulse,
    #[error("impulse response has no nonzero tap")]
    SilentImpulse,
    #[error("input signal is empty")]
    EmptyInput,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("noise segment has zero power")]
    SilentNoise,
    #[error("SNR must be finite, got {0}")]
    InvalidSnr(f64),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("signal of {len} samples is shorter than one {frame}-sample frame")]
    TooShort { len: usize, frame: usize },
    #[error("invalid frontend configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Room impulse response with its direct-path delay cached.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    taps: Vec<f64>,
    direct_path_index: usize,
    pub id: String,
}

impl ImpulseResponse {
    pub fn new(id: impl Into<String>, taps: Vec<f64>) -> Result<Self> {
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(DspError::NonFinite("impulse response"));
        }
        let direct_path_index = direct_path_delay(&taps)?;
        if taps[direct_path_index] == 0.0 {
            return Err(DspError::SilentImpulse);
        }
        Ok(Self {
            taps,
            direct_path_index,
            id: id.into(),
        })
    }

    /// The identity filter `[1.0]`.
    pub fn identity() -> Self {
        Self::new("identity", vec![1.0]).expect("identity impulse is valid")
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn direct_path_index(&self) -> usize {
        self.direct_path_index
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// Index of the strongest tap, `argmax |h(m)|`, ties going to the earliest.
pub fn direct_path_delay(taps: &[f64]) -> Result<usize> {
    if taps.is_empty() {
        return Err(DspError::EmptyImpulse);
    }
    let mut best = 0;
    for (i, t) in taps.iter().enumerate().skip(1) {
        if t.abs() > taps[best].abs() {
            best = i;
        }
    }
    Ok(best)
}

/// Target signal-to-noise ratio in decibels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrSpec {
    snr_db: f64,
}

impl SnrSpec {
    pub fn new(snr_db: f64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(DspError::InvalidSnr(snr_db));
        }
        Ok(Self { snr_db })
    }

    pub fn db(self) -> f64 {
        self.snr_db
    }
}
