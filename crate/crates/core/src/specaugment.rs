//! Adaptive SpecAugment frequency and time masking.
//!
//! Time-mask count and width scale with the utterance length T. Milder
//! policies are derived from a base policy by dividing every masking
//! parameter by 2 (Mid) or 4 (Low).
//!
//! Draw order: for each frequency mask, width then start; then for each time
//! mask, width then start. Every draw uses [`AugRng::index`].

use serde::{Deserialize, Serialize};

use crate::audio_io::FeatureMatrix;
use crate::rng::AugRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskValue {
    Zero,
    /// Mean of the unmasked input matrix.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecAugmentPolicy {
    pub n_freq_masks: usize,
    pub freq_mask_max: usize,
    /// Number of time masks as a fraction of T.
    pub time_mask_ratio: f64,
    /// Widest single time mask as a fraction of T.
    pub time_mask_max_ratio: f64,
    pub mask_value: MaskValue,
}

impl Default for SpecAugmentPolicy {
    /// The full-strength adaptive LibriSpeech policy.
    fn default() -> Self {
        Self {
            n_freq_masks: 2,
            freq_mask_max: 27,
            time_mask_ratio: 0.04,
            time_mask_max_ratio: 0.05,
            mask_value: MaskValue::Zero,
        }
    }
}

impl SpecAugmentPolicy {
    pub fn validate(&self) -> Result<(), String> {
        for (name, r) in [
            ("time_mask_ratio", self.time_mask_ratio),
            ("time_mask_max_ratio", self.time_mask_max_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("{name} {r} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn time_mask_count(&self, frames: usize) -> usize {
        (self.time_mask_ratio * frames as f64).floor() as usize
    }

    pub fn time_mask_max(&self, frames: usize) -> usize {
        (self.time_mask_max_ratio * frames as f64).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    High,
    Mid,
    Low,
}

impl Level {
    fn divisor(self) -> usize {
        match self {
            Level::High => 1,
            Level::Mid => 2,
            Level::Low => 4,
        }
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(Level::High),
            "mid" => Ok(Level::Mid),
            "low" => Ok(Level::Low),
            other => Err(format!("unknown SpecAugment level {other:?}")),
        }
    }
}

/// Scale a base policy: counts and widths floor-divided, ratios divided exactly.
pub fn derive_policy(base: &SpecAugmentPolicy, level: Level) -> SpecAugmentPolicy {
    let k = level.divisor();
    SpecAugmentPolicy {
        n_freq_masks: base.n_freq_masks / k,
        freq_mask_max: base.freq_mask_max / k,
        time_mask_ratio: base.time_mask_ratio / k as f64,
        time_mask_max_ratio: base.time_mask_max_ratio / k as f64,
        mask_value: base.mask_value,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Frequency,
    Time,
}

/// Half-open band `[start, start + width)` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mask {
    pub axis: Axis,
    pub start: usize,
    pub width: usize,
}

/// Draw the masks for a `frames × bins` matrix.
pub fn draw_masks(frames: usize, bins: usize, policy: &SpecAugmentPolicy, rng: &mut AugRng) -> Vec<Mask> {
    let mut masks = Vec::new();
    for _ in 0..policy.n_freq_masks {
        let width = rng.index(policy.freq_mask_max + 1).min(bins);
        let start = rng.index(bins - width + 1);
        masks.push(Mask {
            axis: Axis::Frequency,
            start,
            width,
        });
    }
    let max_width = policy.time_mask_max(frames).min(frames);
    for _ in 0..policy.time_mask_count(frames) {
        let width = rng.index(max_width + 1);
        let start = rng.index(frames - width + 1);
        masks.push(Mask {
            axis: Axis::Time,
            start,
            width,
        });
    }
    masks
}

/// Overwrite the cells covered by `masks` with `value`.
pub fn apply_masks(m: &mut FeatureMatrix, masks: &[Mask], value: f32) {
    for mask in masks {
        match mask.axis {
            Axis::Frequency => {
                for t in 0..m.frames() {
                    for f in mask.start..mask.start + mask.width {
                        m.set(t, f, value);
                    }
                }
            }
            Axis::Time => {
                for t in mask.start..mask.start + mask.width {
                    for f in 0..m.bins() {
                        m.set(t, f, value);
                    }
                }
            }
        }
    }
}

/// Number of distinct cells covered by `masks` on a `frames × bins` grid.
pub fn masked_cell_count(frames: usize, bins: usize, masks: &[Mask]) -> usize {
    let mut freq = vec![false; bins];
    let mut time = vec![false; frames];
    for mask in masks {
        let band = match mask.axis {
            Axis::Frequency => &mut freq,
            Axis::Time => &mut time,
        };
        band[mask.start..mask.start + mask.width]
            .iter_mut()
            .for_each(|b| *b = true);
    }
    let nf = freq.iter().filter(|b| **b).count();
    let nt = time.iter().filter(|b| **b).count();
    nf * frames + nt * bins - nf * nt
}

/// Apply SpecAugment; the output has the same shape and every unmasked cell is unchanged.
pub fn apply_specaugment(m: &FeatureMatrix, policy: &SpecAugmentPolicy, rng: &mut AugRng) -> FeatureMatrix {
    let value = match policy.mask_value {
        MaskValue::Zero => 0.0,
        MaskValue::Mean => {
            let sum: f64 = m.as_slice().iter().map(|&v| v as f64).sum();
            (sum / m.as_slice().len() as f64) as f32
        }
    };
    let masks = draw_masks(m.frames(), m.bins(), policy, rng);
    let mut out = m.clone();
    apply_masks(&mut out, &masks, value);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize, bins: usize) -> FeatureMatrix {
        let data = (0..frames * bins).map(|i| i as f32 + 1.0).collect();
        FeatureMatrix::new("r", frames, bins, data, 10, 25).unwrap()
    }

    #[test]
    fn derive_examples() {
        let base = SpecAugmentPolicy::default();
        let mid = derive_policy(&base, Level::Mid);
        assert_eq!((mid.n_freq_masks, mid.freq_mask_max), (1, 13));
        assert_eq!(mid.time_mask_ratio, 0.02);
        assert_eq!(mid.time_mask_max_ratio, 0.025);
        assert_eq!(derive_policy(&base, Level::High), base);
        assert_eq!(derive_policy(&base, Level::Low).n_freq_masks, 0);
        assert_eq!(derive_policy(&base, Level::Low).freq_mask_max, 6);
    }

    #[test]
    fn zero_policy_is_noop() {
        let m = ramp(50, 20);
        let p = SpecAugmentPolicy {
            n_freq_masks: 0,
            freq_mask_max: 10,
            time_mask_ratio: 0.0,
            time_mask_max_ratio: 0.5,
            mask_value: MaskValue::Zero,
        };
        assert_eq!(apply_specaugment(&m, &p, &mut AugRng::from_seed(5)), m);
    }

    #[test]
    fn explicit_frequency_mask() {
        let m = ramp(4, 8);
        let mut out = m.clone();
        let mask = Mask {
            axis: Axis::Frequency,
            start: 3,
            width: 2,
        };
        apply_masks(&mut out, &[mask], 0.0);
        let changed: Vec<(usize, usize)> = (0..4)
            .flat_map(|t| (0..8).map(move |f| (t, f)))
            .filter(|&(t, f)| out.get(t, f) != m.get(t, f))
            .collect();
        assert_eq!(changed.len(), 8);
        assert!(changed.iter().all(|&(_, f)| f == 3 || f == 4));
        assert!(changed.iter().all(|&(t, f)| out.get(t, f) == 0.0));
        assert_eq!(masked_cell_count(4, 8, &[mask]), 8);
    }

    #[test]
    fn mean_mask_value() {
        let m = ramp(2, 2);
        let p = SpecAugmentPolicy {
            n_freq_masks: 1,
            freq_mask_max: 2,
            time_mask_ratio: 0.0,
            time_mask_max_ratio: 0.0,
            mask_value: MaskValue::Mean,
        };
        for seed in 0..20 {
            let out = apply_specaugment(&m, &p, &mut AugRng::from_seed(seed));
            for (a, b) in out.as_slice().iter().zip(m.as_slice()) {
                assert!(a == b || *a == 2.5);
            }
        }
    }

    #[test]
    fn masks_fit_narrow_matrices() {
        let p = SpecAugmentPolicy::default();
        for seed in 0..200 {
            let masks = draw_masks(3, 5, &p, &mut AugRng::from_seed(seed));
            for mask in masks {
                let limit = if mask.axis == Axis::Frequency { 5 } else { 3 };
                assert!(mask.start + mask.width <= limit);
            }
        }
    }

    #[test]
    fn overlapping_masks_counted_once() {
        let masks = [
            Mask {
                axis: Axis::Frequency,
                start: 0,
                width: 2,
            },
            Mask {
                axis: Axis::Frequency,
                start: 1,
                width: 2,
            },
            Mask {
                axis: Axis::Time,
                start: 0,
                width: 1,
            },
        ];
        // 3 freq bins * 4 frames + 1 frame * 5 bins - overlap 3
        assert_eq!(masked_cell_count(4, 5, &masks), 12 + 5 - 3);
    }
}
