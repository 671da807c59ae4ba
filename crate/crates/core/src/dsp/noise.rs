use super::{DspError, Result, SnrSpec};
use crate::audio_io::AudioBuffer;
use crate::rng::AugRng;

/// Result of [`mix_noise_at_snr`], including everything needed to rebuild it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMix {
    pub mixed: AudioBuffer,
    /// Linear gain applied to the aligned noise.
    pub gain: f64,
    /// Start offset into the noise clip (circular when the clip was tiled).
    pub offset: usize,
    /// Mean power of the reference signal.
    pub signal_power: f64,
    /// Mean power of the aligned, unscaled noise segment.
    pub noise_power: f64,
    /// The reference was silent; `mixed` is the input unchanged.
    pub skipped_silent: bool,
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Noise segment of length `len` starting at `offset`.
///
/// Clips at least `len` long are cropped; shorter clips are tiled end to end,
/// with `offset` taken modulo the clip length.
pub fn aligned_noise(noise: &[f64], len: usize, offset: usize) -> Vec<f64> {
    if noise.len() >= len {
        noise[offset..offset + len].to_vec()
    } else {
        noise
            .iter()
            .cycle()
            .skip(offset % noise.len())
            .take(len)
            .copied()
            .collect()
    }
}

/// Number of distinct start offsets for a clip of `noise_len` against `len` samples.
fn offset_choices(noise_len: usize, len: usize) -> usize {
    if noise_len >= len {
        noise_len - len + 1
    } else {
        noise_len
    }
}

/// Add `noise` to `y` at the requested SNR, drawing the crop/tile offset
/// from `rng` (exactly one draw).
///
/// The gain is `sqrt(P_y / (P_n * 10^(snr/10)))` with both powers taken over
/// the full aligned segment. A silent `y` is returned unchanged with
/// `skipped_silent` set.
pub fn mix_noise_at_snr(y: &AudioBuffer, noise: &AudioBuffer, snr: SnrSpec, rng: &mut AugRng) -> Result<NoiseMix> {
    check_inputs(y, noise)?;
    let offset = rng.index(offset_choices(noise.len(), y.len()));
    mix_noise_at_offset(y, noise, snr, offset)
}

/// Deterministic core of [`mix_noise_at_snr`] with an explicit offset.
pub fn mix_noise_at_offset(y: &AudioBuffer, noise: &AudioBuffer, snr: SnrSpec, offset: usize) -> Result<NoiseMix> {
    check_inputs(y, noise)?;
    if offset >= offset_choices(noise.len(), y.len()) {
        return Err(DspError::InvalidConfig(format!("noise offset {offset} out of range")));
    }
    let segment = aligned_noise(&noise.samples, y.len(), offset);
    let noise_power = mean_power(&segment);
    if noise_power == 0.0 {
        return Err(DspError::SilentNoise);
    }
    let signal_power = mean_power(&y.samples);
    if signal_power == 0.0 {
        log::warn!("{}: silent signal, noise not added", y.id);
        return Ok(NoiseMix {
            mixed: y.clone(),
            gain: 0.0,
            offset,
            signal_power,
            noise_power,
            skipped_silent: true,
        });
    }
    let gain = (signal_power / (noise_power * 10f64.powf(snr.db() / 10.0))).sqrt();
    let samples = y.samples.iter().zip(&segment).map(|(s, n)| s + gain * n).collect();
    Ok(NoiseMix {
        mixed: y.with_samples(samples),
        gain,
        offset,
        signal_power,
        noise_power,
        skipped_silent: false,
    })
}

fn check_inputs(y: &AudioBuffer, noise: &AudioBuffer) -> Result<()> {
    if y.is_empty() || noise.is_empty() {
        return Err(DspError::EmptyInput);
    }
    if y.sample_rate != noise.sample_rate {
        return Err(DspError::RateMismatch(y.sample_rate, noise.sample_rate));
    }
    Ok(())
}
