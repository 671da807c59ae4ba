use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DspError, ImpulseResponse, Result};
use crate::audio_io::AudioBuffer;

/// Kernels up to this many taps are convolved in the time domain.
pub const DIRECT_MAX_TAPS: usize = 128;

/// Full linear convolution, `len(x) + len(h) - 1` samples.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if h.len() <= DIRECT_MAX_TAPS {
        convolve_direct(x, h)
    } else {
        convolve_fft(x, h)
    }
}

/// O(N·M) time-domain convolution.
pub fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    direct_window(x, h, 0, x.len() + h.len() - 1)
}

/// Samples `start..start + len` of the full convolution, computed directly.
fn direct_window(x: &[f64], h: &[f64], start: usize, len: usize) -> Vec<f64> {
    (start..start + len)
        .map(|n| {
            // m ranges over taps with 0 <= n - m < len(x)
            let m_lo = (n + 1).saturating_sub(x.len());
            let m_hi = n.min(h.len() - 1);
            if m_lo > m_hi {
                return 0.0;
            }
            (m_lo..=m_hi).map(|m| h[m] * x[n - m]).sum()
        })
        .collect()
}

/// Overlap-add FFT convolution. Output matches [`convolve_direct`] up to
/// floating-point rounding.
pub fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let fft_len = (4 * h.len())
        .max(256)
        .next_power_of_two()
        .min(out_len.next_power_of_two());
    let block = fft_len - h.len() + 1;

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(fft_len);
    let inverse = planner.plan_fft_inverse(fft_len);
    let mut scratch =
        vec![Complex::default(); forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len())];

    let mut kernel: Vec<Complex<f64>> = h.iter().map(|&t| Complex::new(t, 0.0)).collect();
    kernel.resize(fft_len, Complex::default());
    forward.process_with_scratch(&mut kernel, &mut scratch);

    let scale = 1.0 / fft_len as f64;
    let mut out = vec![0.0; out_len];
    let mut buf = vec![Complex::default(); fft_len];
    for (b, chunk) in x.chunks(block).enumerate() {
        let start = b * block;
        buf.iter_mut().for_each(|c| *c = Complex::default());
        for (dst, &s) in buf.iter_mut().zip(chunk) {
            dst.re = s;
        }
        forward.process_with_scratch(&mut buf, &mut scratch);
        for (v, k) in buf.iter_mut().zip(&kernel) {
            *v *= k;
        }
        inverse.process_with_scratch(&mut buf, &mut scratch);
        let valid = (chunk.len() + h.len() - 1).min(out_len - start);
        for (o, v) in out[start..start + valid].iter_mut().zip(&buf) {
            *o += v.re * scale;
        }
    }
    out
}

/// Reverberate `x` with `h` and remove the direct-path delay.
///
/// Returns `c[d .. d + len(x)]` of the full convolution `c = h * x`, where
/// `d` is the cached direct-path index, so the output lines up sample for
/// sample with the input. Taps are applied as given (no energy normalization).
pub fn apply_rir(x: &AudioBuffer, h: &ImpulseResponse) -> Result<AudioBuffer> {
    if x.is_empty() {
        return Err(DspError::EmptyInput);
    }
    let d = h.direct_path_index();
    let len = x.len();
    let samples = if h.len() <= DIRECT_MAX_TAPS {
        direct_window(&x.samples, h.taps(), d, len)
    } else {
        let mut full = convolve_fft(&x.samples, h.taps());
        full.truncate(d + len);
        full.drain(..d);
        full
    };
    Ok(x.with_samples(samples))
}
