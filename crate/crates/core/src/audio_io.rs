//! Audio buffers, WAV I/O and the binary feature file format.
//!
//! Feature files are little-endian:
//!
//! ```text
//! "PMCTFEAT" | u32 version=1 | u32 T | u32 F | u32 frame_shift_ms | u32 frame_length_ms
//! T*F f32 values, time-major
//! ```

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use thiserror::Error;

/// The single sample rate the DSP pipeline operates at.
pub const OPERATING_RATE: u32 = 16_000;

pub const FEATURE_MAGIC: &[u8; 8] = b"PMCTFEAT";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 28;

const PCM16_SCALE: f64 = 32768.0;

#[derive(Debug, Error)]
pub enum AudioIoError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("{path}: sample rate {found} Hz, expected {expected} Hz")]
    SampleRateMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{0}: non-finite sample")]
    NonFinite(PathBuf),
    #[error("malformed feature header: {0}")]
    MalformedHeader(String),
    #[error("invalid buffer: {0}")]
    InvalidBuffer(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, AudioIoError>;

/// Mono PCM signal, normalized to full scale `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub id: String,
}

impl AudioBuffer {
    pub fn new(id: impl Into<String>, samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(AudioIoError::InvalidBuffer("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioIoError::InvalidBuffer("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            id: id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same id and rate, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
            id: self.id.clone(),
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Controls whether [`load_wav`] enforces the operating rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatePolicy {
    Any,
    Strict,
}

/// Read a WAV file as mono. Multichannel input is mean-downmixed.
pub fn load_wav(path: impl AsRef<Path>, rate: RatePolicy) -> Result<AudioBuffer> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioIoError::FileNotFound(path.to_path_buf()));
    }
    let unsupported = |reason: String| AudioIoError::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path)?;
    // Past this point any failure, including short reads, means the header is not a usable WAV.
    let reader = WavReader::new(BufReader::new(file)).map_err(|e| unsupported(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(unsupported("zero channels".into()));
    }
    if rate == RatePolicy::Strict && spec.sample_rate != OPERATING_RATE {
        return Err(AudioIoError::SampleRateMismatch {
            path: path.to_path_buf(),
            found: spec.sample_rate,
            expected: OPERATING_RATE,
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| unsupported(e.to_string()))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| unsupported(e.to_string()))?,
        (fmt, bits) => return Err(unsupported(format!("{bits}-bit {fmt:?} samples"))),
    };
    if interleaved.iter().any(|s| !s.is_finite()) {
        return Err(AudioIoError::NonFinite(path.to_path_buf()));
    }
    let samples = downmix(&interleaved, spec.channels as usize);
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioBuffer {
        samples,
        sample_rate: spec.sample_rate,
        id,
    })
}

/// Arithmetic mean per frame. A trailing partial frame is dropped.
pub fn downmix(interleaved: &[f64], channels: usize) -> Vec<f64> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect()
}

/// Outcome of a WAV write.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriteStats {
    /// Samples outside `[-1, 1]` that were hard-clipped (pcm16 only).
    pub clipped: usize,
}

/// Write a mono WAV file atomically (temp file + rename).
pub fn save_wav(buffer: &AudioBuffer, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<WriteStats> {
    let path = path.as_ref();
    let mut stats = WriteStats::default();
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => io,
        other => io::Error::other(other.to_string()),
    };
    atomic_write(path, |file| {
        let mut writer = WavWriter::new(file, spec).map_err(to_io)?;
        match encoding {
            WavEncoding::Pcm16 => {
                for &s in &buffer.samples {
                    let (q, clipped) = quantize_pcm16(s);
                    stats.clipped += clipped as usize;
                    writer.write_sample(q).map_err(to_io)?;
                }
            }
            WavEncoding::Float32 => {
                for &s in &buffer.samples {
                    writer.write_sample(s as f32).map_err(to_io)?;
                }
            }
        }
        writer.finalize().map_err(to_io)
    })?;
    if stats.clipped > 0 {
        log::warn!("{}: clipped {} samples", path.display(), stats.clipped);
    }
    Ok(stats)
}

/// Round to the nearest 16-bit code; returns whether the input lay outside `[-1, 1]`.
pub fn quantize_pcm16(s: f64) -> (i16, bool) {
    let clipped = !(-1.0..=1.0).contains(&s);
    let q = (s * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64);
    (q as i16, clipped)
}

/// Write through a sibling temp file, then rename over `path`.
pub(crate) fn atomic_write<F>(path: &Path, body: F) -> io::Result<()>
where
    F: FnOnce(BufWriter<File>) -> io::Result<()>,
{
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = File::create(&tmp).and_then(|f| body(BufWriter::new(f)));
    match result {
        Ok(()) => fs::rename(&tmp, path),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Time × frequency matrix of log-mel features, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    frames: usize,
    bins: usize,
    pub frame_shift_ms: u32,
    pub frame_length_ms: u32,
    pub id: String,
}

impl FeatureMatrix {
    pub fn new(
        id: impl Into<String>,
        frames: usize,
        bins: usize,
        data: Vec<f32>,
        frame_shift_ms: u32,
        frame_length_ms: u32,
    ) -> Result<Self> {
        if frames == 0 || bins == 0 {
            return Err(AudioIoError::InvalidBuffer(format!(
                "empty feature matrix {frames}x{bins}"
            )));
        }
        if data.len() != frames * bins {
            return Err(AudioIoError::InvalidBuffer(format!(
                "{} values for a {frames}x{bins} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AudioIoError::InvalidBuffer("non-finite feature value".into()));
        }
        Ok(Self {
            data,
            frames,
            bins,
            frame_shift_ms,
            frame_length_ms,
            id: id.into(),
        })
    }

    /// Number of time frames (T).
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of frequency bins (F).
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn get(&self, t: usize, f: usize) -> f32 {
        self.data[t * self.bins + f]
    }

    pub fn set(&mut self, t: usize, f: usize, v: f32) {
        self.data[t * self.bins + f] = v;
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

pub fn encode_features(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [
        FEATURE_VERSION,
        m.frames as u32,
        m.bins as u32,
        m.frame_shift_ms,
        m.frame_length_ms,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], id: impl Into<String>) -> Result<FeatureMatrix> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(AudioIoError::MalformedHeader(format!(
            "{} bytes, header needs 28",
            bytes.len()
        )));
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(AudioIoError::MalformedHeader("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FEATURE_VERSION {
        return Err(AudioIoError::MalformedHeader(format!("unsupported version {version}")));
    }
    let (frames, bins) = (word(1) as usize, word(2) as usize);
    let payload = &bytes[FEATURE_HEADER_LEN..];
    let expected = frames
        .checked_mul(bins)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| AudioIoError::MalformedHeader("dimension overflow".into()))?;
    if payload.len() != expected {
        return Err(AudioIoError::MalformedHeader(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(id, frames, bins, data, word(3), word(4))
        .map_err(|e| AudioIoError::MalformedHeader(e.to_string()))
}

pub fn write_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_features(m);
    atomic_write(path.as_ref(), |mut w| {
        w.write_all(&bytes)?;
        w.flush()
    })?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_features(&bytes, id)
}
