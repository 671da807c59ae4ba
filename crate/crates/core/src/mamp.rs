//! Multi-condition audio modification and patching.
//!
//! [`augment_mct`] is the plain multi-condition baseline: reverberate and/or
//! add noise. [`augment_pmct`] builds the fully distorted signal the same way,
//! cuts both versions into equal patches and picks each patch from the clean
//! signal with probability π.
//!
//! Draw order per utterance is fixed:
//!
//! 1. reverb decision, noise decision, SNR, noise offset (one draw each,
//!    always consumed)
//! 2. π, only in [`PiMode::Random`]
//! 3. one draw per patch, in patch order; `u < π` selects the clean patch
//!
//! Because pMCT reuses step 1 verbatim, `augment_pmct` with π = 0 and
//! `augment_mct` with both probabilities at 1 agree bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::AudioBuffer;
use crate::dsp::{self, DspError, ImpulseResponse, SnrSpec};
use crate::rng::AugRng;

#[derive(Debug, Error, PartialEq)]
pub enum MampError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("signal length mismatch: clean {clean}, distorted {distorted}")]
    LengthMismatch { clean: usize, distorted: usize },
    #[error(transparent)]
    Dsp(#[from] DspError),
}

pub type Result<T> = std::result::Result<T, MampError>;

/// Closed SNR interval in dB; draws are uniform over it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRange {
    pub lo: f64,
    pub hi: f64,
}

impl SnrRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(MampError::InvalidConfig(format!("bad SNR range [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// Degenerate range that always yields `snr_db`.
    pub fn fixed(snr_db: f64) -> Self {
        Self { lo: snr_db, hi: snr_db }
    }

    pub fn draw(&self, rng: &mut AugRng) -> f64 {
        rng.uniform_in(self.lo, self.hi)
    }
}

impl Default for SnrRange {
    fn default() -> Self {
        Self { lo: 0.0, hi: 30.0 }
    }
}

/// How the clean-patch probability π is chosen per utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiMode {
    Fixed(f64),
    /// π ~ U(0, 1), drawn once per utterance.
    Random,
}

impl std::str::FromStr for PiMode {
    type Err = MampError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("rand") {
            return Ok(PiMode::Random);
        }
        let pi: f64 = s
            .parse()
            .map_err(|_| MampError::InvalidConfig(format!("pi must be a number or \"rand\", got {s:?}")))?;
        if !(0.0..=1.0).contains(&pi) {
            return Err(MampError::InvalidConfig(format!("pi {pi} outside [0, 1]")));
        }
        Ok(PiMode::Fixed(pi))
    }
}

impl std::fmt::Display for PiMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PiMode::Fixed(p) => write!(f, "{p}"),
            PiMode::Random => f.write_str("rand"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MampConfig {
    pub pi_clean: PiMode,
    /// Patch length in seconds.
    pub patch_len_s: f64,
    pub snr_range_db: SnrRange,
}

impl Default for MampConfig {
    fn default() -> Self {
        Self {
            pi_clean: PiMode::Fixed(0.5),
            patch_len_s: 1.0,
            snr_range_db: SnrRange::default(),
        }
    }
}

impl MampConfig {
    pub fn validate(&self) -> Result<()> {
        if let PiMode::Fixed(p) = self.pi_clean {
            if !(0.0..=1.0).contains(&p) {
                return Err(MampError::InvalidConfig(format!("pi {p} outside [0, 1]")));
            }
        }
        if !(self.patch_len_s.is_finite() && self.patch_len_s > 0.0) {
            return Err(MampError::InvalidConfig(format!("patch length {} s", self.patch_len_s)));
        }
        SnrRange::new(self.snr_range_db.lo, self.snr_range_db.hi)?;
        Ok(())
    }

    /// Patch length in samples, `round(patch_len_s * sample_rate)`, at least 1.
    pub fn patch_len_samples(&self, sample_rate: u32) -> usize {
        ((self.patch_len_s * sample_rate as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MctConfig {
    pub p_reverb: f64,
    pub p_noise: f64,
    pub snr_range_db: SnrRange,
}

impl Default for MctConfig {
    fn default() -> Self {
        Self {
            p_reverb: 0.5,
            p_noise: 0.5,
            snr_range_db: SnrRange::default(),
        }
    }
}

impl MctConfig {
    /// Always reverberate and always add noise: the full distortion.
    pub fn full(snr_range_db: SnrRange) -> Self {
        Self {
            p_reverb: 1.0,
            p_noise: 1.0,
            snr_range_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_reverb", self.p_reverb), ("p_noise", self.p_noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(MampError::InvalidConfig(format!("{name} {p} outside [0, 1]")));
            }
        }
        SnrRange::new(self.snr_range_db.lo, self.snr_range_db.hi)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchSource {
    #[serde(rename = "C")]
    Clean,
    #[serde(rename = "D")]
    Distorted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub start: usize,
    pub len: usize,
}

/// Contiguous equal-length patches covering the signal; only the last may be shorter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchPlan {
    pub patches: Vec<Patch>,
    /// Empty until [`assign_sources`] runs, then one entry per patch.
    pub sources: Vec<PatchSource>,
}

impl PatchPlan {
    pub fn total_len(&self) -> usize {
        self.patches.iter().map(|p| p.len).sum()
    }

    pub fn clean_count(&self) -> usize {
        self.sources.iter().filter(|s| **s == PatchSource::Clean).count()
    }
}

/// Split `len` samples into `ceil(len / patch_len)` patches.
pub fn extract_patch_plan(len: usize, patch_len: usize) -> PatchPlan {
    let patch_len = patch_len.max(1);
    let patches = (0..len)
        .step_by(patch_len)
        .map(|start| Patch {
            start,
            len: patch_len.min(len - start),
        })
        .collect();
    PatchPlan {
        patches,
        sources: Vec::new(),
    }
}

/// Label each patch Clean when its draw `u_p < pi`, else Distorted.
pub fn assign_sources(mut plan: PatchPlan, pi: f64, rng: &mut AugRng) -> PatchPlan {
    plan.sources = plan
        .patches
        .iter()
        .map(|_| {
            if rng.chance(pi) {
                PatchSource::Clean
            } else {
                PatchSource::Distorted
            }
        })
        .collect();
    plan
}

/// Copy each patch from `clean` or `distorted` according to `plan.sources`.
pub fn splice(clean: &[f64], distorted: &[f64], plan: &PatchPlan) -> Result<Vec<f64>> {
    if clean.len() != distorted.len() || plan.total_len() != clean.len() {
        return Err(MampError::LengthMismatch {
            clean: clean.len(),
            distorted: distorted.len(),
        });
    }
    if plan.sources.len() != plan.patches.len() {
        return Err(MampError::InvalidConfig("patch plan has no sources assigned".into()));
    }
    let mut out = Vec::with_capacity(clean.len());
    for (patch, source) in plan.patches.iter().zip(&plan.sources) {
        let from = match source {
            PatchSource::Clean => clean,
            PatchSource::Distorted => distorted,
        };
        out.extend_from_slice(&from[patch.start..patch.start + patch.len]);
    }
    Ok(out)
}

/// Output of [`augment_mct`] with the decisions that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MctOutcome {
    pub audio: AudioBuffer,
    pub reverb_applied: bool,
    pub noise_applied: bool,
    /// SNR drawn for this utterance (drawn even when noise is skipped).
    pub snr_db: f64,
    pub noise_offset: usize,
    pub noise_gain: f64,
}

/// Multi-condition augmentation: reverberate with probability `p_reverb`,
/// independently add noise with probability `p_noise`.
pub fn augment_mct(
    x: &AudioBuffer,
    h: &ImpulseResponse,
    noise: &AudioBuffer,
    cfg: &MctConfig,
    rng: &mut AugRng,
) -> Result<MctOutcome> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(DspError::EmptyInput.into());
    }
    let reverb_applied = rng.chance(cfg.p_reverb);
    let noise_applied = rng.chance(cfg.p_noise);
    let snr_db = cfg.snr_range_db.draw(rng);

    let reverberated = if reverb_applied {
        dsp::apply_rir(x, h)?
    } else {
        x.clone()
    };
    if !noise_applied {
        // keep the draw count fixed
        rng.uniform();
        return Ok(MctOutcome {
            audio: reverberated,
            reverb_applied,
            noise_applied,
            snr_db,
            noise_offset: 0,
            noise_gain: 0.0,
        });
    }
    let mix = dsp::mix_noise_at_snr(&reverberated, noise, SnrSpec::new(snr_db)?, rng)?;
    Ok(MctOutcome {
        audio: mix.mixed,
        reverb_applied,
        noise_applied: !mix.skipped_silent,
        snr_db,
        noise_offset: mix.offset,
        noise_gain: mix.gain,
    })
}

/// Output of [`augment_pmct`].
#[derive(Debug, Clone, PartialEq)]
pub struct PmctOutcome {
    /// The patch-mixed signal z.
    pub audio: AudioBuffer,
    pub plan: PatchPlan,
    pub pi_effective: f64,
    pub patch_len: usize,
    /// The fully distorted signal y the distorted patches came from.
    pub distorted: MctOutcome,
}

/// Patched multi-condition augmentation of one utterance.
pub fn augment_pmct(
    x: &AudioBuffer,
    h: &ImpulseResponse,
    noise: &AudioBuffer,
    cfg: &MampConfig,
    rng: &mut AugRng,
) -> Result<PmctOutcome> {
    cfg.validate()?;
    let distorted = augment_mct(x, h, noise, &MctConfig::full(cfg.snr_range_db), rng)?;
    let pi_effective = match cfg.pi_clean {
        PiMode::Fixed(p) => p,
        PiMode::Random => rng.uniform(),
    };
    let patch_len = cfg.patch_len_samples(x.sample_rate);
    let plan = assign_sources(extract_patch_plan(x.len(), patch_len), pi_effective, rng);
    let z = splice(&x.samples, &distorted.audio.samples, &plan)?;
    Ok(PmctOutcome {
        audio: x.with_samples(z),
        plan,
        pi_effective,
        patch_len,
        distorted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lens(plan: &PatchPlan) -> Vec<usize> {
        plan.patches.iter().map(|p| p.len).collect()
    }

    #[test]
    fn patch_plan_examples() {
        assert_eq!(lens(&extract_patch_plan(35200, 16000)), vec![16000, 16000, 3200]);
        assert_eq!(lens(&extract_patch_plan(8000, 16000)), vec![8000]);
        assert_eq!(lens(&extract_patch_plan(32000, 16000)), vec![16000, 16000]);
        let p = extract_patch_plan(35200, 16000);
        assert_eq!(p.patches[2].start, 32000);
    }

    #[test]
    fn degenerate_probabilities() {
        let plan = extract_patch_plan(1000, 10);
        let mut rng = AugRng::from_seed(1);
        let all_clean = assign_sources(plan.clone(), 1.0, &mut rng);
        assert!(all_clean.sources.iter().all(|s| *s == PatchSource::Clean));
        let all_dist = assign_sources(plan, 0.0, &mut rng);
        assert!(all_dist.sources.iter().all(|s| *s == PatchSource::Distorted));
    }

    #[test]
    fn pi_parsing() {
        assert_eq!("rand".parse::<PiMode>(), Ok(PiMode::Random));
        assert_eq!("0.25".parse::<PiMode>(), Ok(PiMode::Fixed(0.25)));
        assert!("1.5".parse::<PiMode>().is_err());
        assert!("half".parse::<PiMode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MampConfig::default().validate().is_ok());
        let bad = MampConfig {
            patch_len_s: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MctConfig {
            p_noise: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(SnrRange::new(10.0, 5.0).is_err());
        assert_eq!(MampConfig::default().patch_len_samples(16000), 16000);
    }

    #[test]
    fn splice_rejects_mismatch() {
        let plan = assign_sources(extract_patch_plan(4, 2), 0.5, &mut AugRng::from_seed(0));
        assert!(splice(&[0.0; 4], &[0.0; 3], &plan).is_err());
        assert!(splice(&[0.0; 4], &[0.0; 4], &extract_patch_plan(4, 2)).is_err());
    }

    #[test]
    fn mct_without_any_modification_is_identity() {
        let x = AudioBuffer::new("x", (0..500).map(|i| (i as f64 * 0.1).sin()).collect(), 16000).unwrap();
        let noise = AudioBuffer::new("n", vec![0.3; 50], 16000).unwrap();
        let h = ImpulseResponse::new("h", vec![0.0, 1.0, 0.5]).unwrap();
        let cfg = MctConfig {
            p_reverb: 0.0,
            p_noise: 0.0,
            ..Default::default()
        };
        let out = augment_mct(&x, &h, &noise, &cfg, &mut AugRng::from_seed(3)).unwrap();
        assert_eq!(out.audio, x);
        let cfg = MctConfig {
            p_reverb: 1.0,
            p_noise: 0.0,
            ..Default::default()
        };
        let out = augment_mct(
            &x,
            &ImpulseResponse::identity(),
            &noise,
            &cfg,
            &mut AugRng::from_seed(3),
        )
        .unwrap();
        assert_eq!(out.audio, x);
    }
}
