use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DspError, Result};
use crate::audio_io::{AudioBuffer, FeatureMatrix};

/// Floor applied to filter energies before the natural log.
pub const LOG_FLOOR: f64 = 1e-10;

/// Framing and filterbank parameters for [`log_mel_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub frame_length_ms: u32,
    pub frame_shift_ms: u32,
    pub n_mels: usize,
    /// FFT size; `None` uses the next power of two of the frame length.
    pub n_fft: Option<usize>,
    pub f_min: f64,
    /// Upper band edge; `None` uses Nyquist.
    pub f_max: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            frame_length_ms: 25,
            frame_shift_ms: 10,
            n_mels: 80,
            n_fft: None,
            f_min: 0.0,
            f_max: None,
        }
    }
}

impl MelConfig {
    pub fn frame_len(&self, sample_rate: u32) -> usize {
        (self.frame_length_ms as u64 * sample_rate as u64 / 1000) as usize
    }

    pub fn hop(&self, sample_rate: u32) -> usize {
        (self.frame_shift_ms as u64 * sample_rate as u64 / 1000) as usize
    }

    fn fft_len(&self, sample_rate: u32) -> usize {
        self.n_fft
            .unwrap_or_else(|| self.frame_len(sample_rate).next_power_of_two())
    }

    fn f_max(&self, sample_rate: u32) -> f64 {
        self.f_max.unwrap_or(sample_rate as f64 / 2.0)
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels + 2` band edges equally spaced on the mel scale, in Hz.
fn band_edges(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Center frequency of each mel filter for `config` at `sample_rate`.
pub fn mel_center_frequencies(config: &MelConfig, sample_rate: u32) -> Vec<f64> {
    let edges = band_edges(config.n_mels, config.f_min, config.f_max(sample_rate));
    edges[1..=config.n_mels].to_vec()
}

/// Triangular filters with unit peak, evaluated at each FFT bin frequency.
fn filterbank(config: &MelConfig, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_fft = config.fft_len(sample_rate);
    let n_bins = n_fft / 2 + 1;
    let edges = band_edges(config.n_mels, config.f_min, config.f_max(sample_rate));
    (0..config.n_mels)
        .map(|k| {
            let (left, center, right) = (edges[k], edges[k + 1], edges[k + 2]);
            (0..n_bins)
                .map(|b| {
                    let f = b as f64 * sample_rate as f64 / n_fft as f64;
                    let rise = (f - left) / (center - left);
                    let fall = (right - f) / (right - center);
                    rise.min(fall).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Log-mel filterbank features: Hann window, power spectrum, triangular mel
/// filters, natural log floored at [`LOG_FLOOR`].
///
/// Produces `1 + (L - frame_len) / hop` frames.
pub fn log_mel_features(x: &AudioBuffer, config: &MelConfig) -> Result<FeatureMatrix> {
    let rate = x.sample_rate;
    let frame_len = config.frame_len(rate);
    let hop = config.hop(rate);
    let n_fft = config.fft_len(rate);
    if frame_len == 0 || hop == 0 || config.n_mels == 0 {
        return Err(DspError::InvalidConfig(
            "frame, hop and mel count must be positive".into(),
        ));
    }
    if n_fft < frame_len {
        return Err(DspError::InvalidConfig(format!(
            "n_fft {n_fft} shorter than frame {frame_len}"
        )));
    }
    if config.f_max(rate) <= config.f_min || config.f_max(rate) > rate as f64 / 2.0 {
        return Err(DspError::InvalidConfig("mel band edges out of range".into()));
    }
    if x.len() < frame_len {
        return Err(DspError::TooShort {
            len: x.len(),
            frame: frame_len,
        });
    }

    let frames = 1 + (x.len() - frame_len) / hop;
    let window: Vec<f64> = (0..frame_len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame_len as f64).cos())
        .collect();
    let bank = filterbank(config, rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut data = Vec::with_capacity(frames * config.n_mels);

    for t in 0..frames {
        let frame = &x.samples[t * hop..t * hop + frame_len];
        buf.iter_mut().for_each(|c| *c = Complex::default());
        for ((dst, &s), &w) in buf.iter_mut().zip(frame).zip(&window) {
            dst.re = s * w;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filter in &bank {
            let energy: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            data.push(energy.max(LOG_FLOOR).ln() as f32);
        }
    }

    FeatureMatrix::new(
        x.id.clone(),
        frames,
        config.n_mels,
        data,
        config.frame_shift_ms,
        config.frame_length_ms,
    )
    .map_err(|_| DspError::NonFinite("features"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(v: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new("m", v, 16000).unwrap()
    }

    #[test]
    fn single_frame() {
        let m = log_mel_features(&buf(vec![0.1; 400]), &MelConfig::default()).unwrap();
        assert_eq!((m.frames(), m.bins()), (1, 80));
        let m = log_mel_features(&buf(vec![0.1; 400 + 160 * 3 + 159]), &MelConfig::default()).unwrap();
        assert_eq!(m.frames(), 4);
    }

    #[test]
    fn zeros_hit_the_floor() {
        let m = log_mel_features(&buf(vec![0.0; 1600]), &MelConfig::default()).unwrap();
        let floor = LOG_FLOOR.ln() as f32;
        assert!(m.as_slice().iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short() {
        assert_eq!(
            log_mel_features(&buf(vec![0.0; 399]), &MelConfig::default()),
            Err(DspError::TooShort { len: 399, frame: 400 })
        );
    }

    #[test]
    fn mel_scale_roundtrip() {
        for hz in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.1);
    }
}
