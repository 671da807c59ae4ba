//! Deterministic patched multi-condition training (pMCT) augmentation.
//!
//! The toolkit reverberates and noises clean speech (vanilla MCT), then
//! splices fixed-length patches from the clean and distorted versions of the
//! same utterance into a single training signal. It also ships SpecAugment
//! masking over log-mel features and an attention eigen-skewness metric for
//! comparing trained models.
//!
//! Every random decision is drawn from an explicit [`rng::AugRng`] whose
//! draw order is fixed, so a `(seed, utterance id, epoch)` triple always
//! reproduces the same output bit for bit.

pub mod attention_metrics;
pub mod audio_io;
pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod mamp;
pub mod rng;
pub mod specaugment;

pub use audio_io::{AudioBuffer, FeatureMatrix, OPERATING_RATE};
pub use dsp::{ImpulseResponse, SnrSpec};
pub use mamp::{MampConfig, MctConfig, PatchPlan, PatchSource, PiMode};
pub use rng::AugRng;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
