mod common;

use common::*;
use pmct::audio_io::{load_wav, save_wav, RatePolicy, WavEncoding};
use pmct::dsp::{
    aligned_noise, apply_rir, convolve, convolve_direct, convolve_fft, log_mel_features, mel_center_frequencies,
    mix_noise_at_offset, mix_noise_at_snr, DspError, MelConfig,
};
use pmct::{AugRng, ImpulseResponse, SnrSpec, OPERATING_RATE};
use proptest::prelude::*;

#[test]
fn fft_matches_naive_on_small_grid() {
    let mut rng = AugRng::from_seed(11);
    let mut worst = 0.0f64;
    for n in 1..=256 {
        let x = random_signal(&mut rng, n);
        for m in 1..=64 {
            let h = random_signal(&mut rng, m);
            let want = naive_convolve(&x, &h);
            worst = worst.max(max_abs_diff(&convolve_fft(&x, &h), &want));
            worst = worst.max(max_abs_diff(&convolve(&x, &h), &want));
        }
    }
    assert!(worst < 1e-6, "max error {worst}");
}

#[test]
fn direct_path_matches_naive() {
    let mut rng = AugRng::from_seed(12);
    for (n, m) in [(1, 1), (5, 128), (1000, 17), (300, 129)] {
        let x = random_signal(&mut rng, n);
        let h = random_signal(&mut rng, m);
        assert!(max_abs_diff(&convolve_direct(&x, &h), &naive_convolve(&x, &h)) < 1e-12);
    }
}

#[test]
fn long_rir_matches_naive() {
    let mut rng = AugRng::from_seed(13);
    let x = random_signal(&mut rng, 16000);
    let h = synthetic_rir(&mut rng, 4096, 40);
    let err = max_abs_diff(&convolve(&x, &h), &naive_convolve(&x, &h));
    assert!(err < 1e-6, "max error {err}");
}

#[test]
fn single_tap_rirs_only_shift_and_scale() {
    let mut rng = AugRng::from_seed(14);
    let x = buffer("x", random_signal(&mut rng, 3000));
    for d in [0, 7, 511] {
        let mut taps = vec![0.0; d + 1];
        taps[d] = 0.75;
        let h = ImpulseResponse::new("single", taps).unwrap();
        let y = apply_rir(&x, &h).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in y.samples.iter().zip(&x.samples) {
            assert!((a - 0.75 * b).abs() <= 1e-9);
        }
    }
}

#[test]
fn apply_rir_is_naive_window() {
    let mut rng = AugRng::from_seed(15);
    let x = buffer("x", random_signal(&mut rng, 5000));
    let taps = synthetic_rir(&mut rng, 900, 33);
    let full = naive_convolve(&x.samples, &taps);
    let y = apply_rir(&x, &ImpulseResponse::new("r", taps).unwrap()).unwrap();
    assert!(max_abs_diff(&y.samples, &full[33..33 + 5000]) < 1e-9);
}

#[test]
fn silent_and_empty_rirs_rejected() {
    assert_eq!(
        ImpulseResponse::new("z", vec![0.0; 10]).unwrap_err(),
        DspError::SilentImpulse
    );
    assert_eq!(ImpulseResponse::new("e", vec![]).unwrap_err(), DspError::EmptyImpulse);
}

#[test]
fn snr_reconstructs_for_cropped_and_tiled_noise() {
    let mut rng = AugRng::from_seed(16);
    let y = buffer("y", random_signal(&mut rng, 4000));
    for noise_len in [100, 3999, 4000, 9000] {
        let noise = buffer("n", random_signal(&mut rng, noise_len));
        for snr in [0.0, 7.5, 30.0] {
            let mix = mix_noise_at_snr(&y, &noise, SnrSpec::new(snr).unwrap(), &mut rng).unwrap();
            let seg = aligned_noise(&noise.samples, y.len(), mix.offset);
            let scaled: Vec<f64> = seg.iter().map(|v| mix.gain * v).collect();
            let measured = 10.0 * (power(&y.samples) / power(&scaled)).log10();
            assert!((measured - snr).abs() < 1e-6, "len {noise_len} snr {snr}: {measured}");
            let residual: Vec<f64> = mix.mixed.samples.iter().zip(&y.samples).map(|(m, s)| m - s).collect();
            assert!(max_abs_diff(&residual, &scaled) < 1e-12);
        }
    }
}

#[test]
fn offset_mixing_replays_random_mixing() {
    let mut rng = AugRng::from_seed(17);
    let y = buffer("y", random_signal(&mut rng, 2500));
    let noise = buffer("n", random_signal(&mut rng, 777));
    let mixed = mix_noise_at_snr(&y, &noise, SnrSpec::new(12.0).unwrap(), &mut rng).unwrap();
    let replay = mix_noise_at_offset(&y, &noise, SnrSpec::new(12.0).unwrap(), mixed.offset).unwrap();
    assert_eq!(mixed.mixed, replay.mixed);
}

#[test]
fn silent_noise_and_silent_signal() {
    let mut rng = AugRng::from_seed(18);
    let y = buffer("y", random_signal(&mut rng, 100));
    let quiet = buffer("n", vec![0.0; 100]);
    assert!(mix_noise_at_snr(&y, &quiet, SnrSpec::new(5.0).unwrap(), &mut rng).is_err());
    let silent = buffer("s", vec![0.0; 100]);
    let noise = buffer("n", random_signal(&mut rng, 100));
    let mix = mix_noise_at_snr(&silent, &noise, SnrSpec::new(5.0).unwrap(), &mut rng).unwrap();
    assert!(mix.skipped_silent);
    assert_eq!(mix.mixed.samples, silent.samples);
}

#[test]
fn sine_peaks_in_nearest_mel_bin() {
    let x: Vec<f64> = (0..OPERATING_RATE as usize)
        .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / OPERATING_RATE as f64).sin())
        .collect();
    let cfg = MelConfig::default();
    let m = log_mel_features(&buffer("sine", x), &cfg).unwrap();
    assert_eq!(m.bins(), 80);
    assert_eq!(m.frames(), 98);
    let centers = mel_center_frequencies(&cfg, OPERATING_RATE);
    let nearest = (0..centers.len())
        .min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs()))
        .unwrap();
    for t in 0..m.frames() {
        let frame = m.frame(t);
        let argmax = (0..frame.len()).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
        assert_eq!(argmax, nearest, "frame {t}");
    }
}

#[test]
fn too_short_for_one_frame() {
    let err = log_mel_features(&buffer("s", vec![0.1; 399]), &MelConfig::default()).unwrap_err();
    assert!(matches!(err, DspError::TooShort { len: 399, frame: 400 }));
    let ok = log_mel_features(&buffer("s", vec![0.1; 400]), &MelConfig::default()).unwrap();
    assert_eq!(ok.frames(), 1);
}

#[test]
fn float_wav_roundtrip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = AugRng::from_seed(19);
    let samples: Vec<f64> = random_signal(&mut rng, 1000).iter().map(|&v| v as f32 as f64).collect();
    let path = dir.path().join("a.wav");
    save_wav(&buffer("a", samples.clone()), &path, WavEncoding::Float32).unwrap();
    assert_eq!(load_wav(&path, RatePolicy::Strict).unwrap().samples, samples);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convolution_is_linear(
        x1 in prop::collection::vec(-1.0f64..1.0, 1..300),
        seed in any::<u64>(),
        a in -3.0f64..3.0,
        m in 1usize..200,
    ) {
        let mut rng = AugRng::from_seed(seed);
        let x2 = random_signal(&mut rng, x1.len());
        let h = random_signal(&mut rng, m);
        let mixed: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + q).collect();
        let lhs = convolve(&mixed, &h);
        let r1 = convolve(&x1, &h);
        let r2 = convolve(&x2, &h);
        let rhs: Vec<f64> = r1.iter().zip(&r2).map(|(p, q)| a * p + q).collect();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn output_length_matches_input(len in 1usize..2000, taps in 1usize..300, d in 0usize..300, seed in any::<u64>()) {
        let d = d % taps;
        let mut rng = AugRng::from_seed(seed);
        let x = buffer("x", random_signal(&mut rng, len));
        let h = ImpulseResponse::new("h", synthetic_rir(&mut rng, taps, d)).unwrap();
        prop_assert_eq!(h.direct_path_index(), d);
        prop_assert_eq!(apply_rir(&x, &h).unwrap().len(), len);
    }

    #[test]
    fn snr_holds_for_any_target(seed in any::<u64>(), snr in -10.0f64..40.0, n in 1usize..3000, l in 1usize..3000) {
        let mut rng = AugRng::from_seed(seed);
        let y = buffer("y", random_signal(&mut rng, l));
        let noise = buffer("n", random_signal(&mut rng, n));
        let mix = mix_noise_at_snr(&y, &noise, SnrSpec::new(snr).unwrap(), &mut rng).unwrap();
        let seg = aligned_noise(&noise.samples, l, mix.offset);
        let scaled: Vec<f64> = seg.iter().map(|v| mix.gain * v).collect();
        prop_assume!(power(&scaled) > 0.0);
        let measured = 10.0 * (power(&y.samples) / power(&scaled)).log10();
        prop_assert!((measured - snr).abs() < 1e-6);
    }
}
