#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use pmct::audio_io::{save_wav, WavEncoding};
use pmct::cli::RunConfig;
use pmct::dsp::{apply_rir, mix_noise_at_snr};
use pmct::mamp::{MampConfig, PiMode};
use pmct::{AudioBuffer, AugRng, ImpulseResponse, SnrSpec, OPERATING_RATE};

/// Textbook full linear convolution, written out independently of the crate.
pub fn naive_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, xi) in x.iter().enumerate() {
        for (j, hj) in h.iter().enumerate() {
            out[i + j] += xi * hj;
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_signal(rng: &mut AugRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
}

pub fn buffer(id: &str, samples: Vec<f64>) -> AudioBuffer {
    AudioBuffer::new(id, samples, OPERATING_RATE).unwrap()
}

/// Exponentially decaying impulse response with its direct path at `delay`.
pub fn synthetic_rir(rng: &mut AugRng, taps: usize, delay: usize) -> Vec<f64> {
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            if i <= delay {
                0.0
            } else {
                0.3 * rng.uniform_in(-1.0, 1.0) * (-((i - delay) as f64) / (taps as f64 / 6.0)).exp()
            }
        })
        .collect();
    h[delay] = 1.0;
    h
}

/// Mean power written as a plain loop.
pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted descending.
pub fn jacobi_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (rp, rq) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * rp[k] - s * rq[k];
                    a[q][k] = s * rp[k] + c * rq[k];
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// `A·Aᵀ` as nested vectors, computed by hand.
pub fn gram(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let n = a.nrows();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..a.ncols()).map(|k| a[(i, k)] * a[(j, k)]).sum())
                .collect()
        })
        .collect()
}

pub fn random_stochastic(rng: &mut AugRng, n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.uniform() + 1e-3);
    for mut row in a.row_iter_mut() {
        let s: f64 = row.iter().sum();
        row /= s;
    }
    a
}

/// Row-stochastic `w·J/T + (1-w)·C`, where `C` averages a window of `k` keys.
/// Larger `w` concentrates the spectrum into its first eigenvalue.
pub fn blended_attention(t: usize, w: f64, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |i, j| {
        let in_window = (j + t - i) % t < k;
        w / t as f64 + if in_window { (1.0 - w) / k as f64 } else { 0.0 }
    })
}

pub struct Case {
    pub x: AudioBuffer,
    pub h: ImpulseResponse,
    pub noise: AudioBuffer,
}

pub fn case(seed: u64) -> Case {
    let mut rng = AugRng::from_seed(seed);
    let len = 800 + rng.index(40_000);
    let taps = 1 + rng.index(600);
    let delay = rng.index(taps);
    let noise_len = 1 + rng.index(50_000);
    Case {
        x: buffer("x", random_signal(&mut rng, len)),
        h: ImpulseResponse::new("h", synthetic_rir(&mut rng, taps, delay)).unwrap(),
        noise: buffer("n", random_signal(&mut rng, noise_len)),
    }
}

pub fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// pMCT rebuilt from its parts, following the documented draw order.
pub fn manual_pmct(c: &Case, cfg: &MampConfig, seed: u64) -> Vec<f64> {
    let mut rng = AugRng::from_seed(seed);
    assert!(rng.chance(1.0));
    assert!(rng.chance(1.0));
    let snr = rng.uniform_in(cfg.snr_range_db.lo, cfg.snr_range_db.hi);
    let y = apply_rir(&c.x, &c.h).unwrap();
    let y = mix_noise_at_snr(&y, &c.noise, SnrSpec::new(snr).unwrap(), &mut rng)
        .unwrap()
        .mixed
        .samples;
    let pi = match cfg.pi_clean {
        PiMode::Fixed(p) => p,
        PiMode::Random => rng.uniform(),
    };
    let lp = ((cfg.patch_len_s * 16000.0).round() as usize).max(1);
    let mut z = Vec::with_capacity(c.x.len());
    let mut start = 0;
    while start < c.x.len() {
        let end = (start + lp).min(c.x.len());
        let src = if rng.uniform() < pi { &c.x.samples } else { &y };
        z.extend_from_slice(&src[start..end]);
        start = end;
    }
    z
}

pub fn write_wav(path: &Path, id: &str, samples: Vec<f64>) {
    save_wav(&buffer(id, samples), path, WavEncoding::Float32).unwrap();
}

/// A small corpus on disk: utterances, RIRs, noises, manifest and pool lists.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub rir_list: PathBuf,
    pub noise_list: PathBuf,
}

pub struct FixtureSpec {
    pub utterances: usize,
    pub utterance_s: f64,
    pub rirs: usize,
    pub rir_taps: usize,
    pub noises: usize,
    pub noise_s: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            utterances: 6,
            utterance_s: 1.3,
            rirs: 3,
            rir_taps: 400,
            noises: 2,
            noise_s: 0.8,
            seed: 7,
        }
    }
}

impl Fixture {
    pub fn new(spec: &FixtureSpec) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for sub in ["audio", "rir", "noise"] {
            fs::create_dir_all(root.join(sub)).unwrap();
        }
        let mut rng = AugRng::from_seed(spec.seed);
        let mut manifest = String::new();
        for i in 0..spec.utterances {
            let id = format!("utt{i:03}");
            // lengths vary so the last patch is usually short
            let len = (spec.utterance_s * OPERATING_RATE as f64) as usize + 37 * i;
            let x: Vec<f64> = (0..len)
                .map(|n| 0.4 * (n as f64 * (0.01 + 0.003 * i as f64)).sin() + 0.05 * rng.uniform_in(-1.0, 1.0))
                .collect();
            write_wav(&root.join(format!("audio/{id}.wav")), &id, x);
            manifest += &format!("{{\"id\":\"{id}\",\"audio_path\":\"audio/{id}.wav\"}}\n");
        }
        let mut rirs = String::new();
        for i in 0..spec.rirs {
            let delay = (i * 13) % (spec.rir_taps / 4).max(1);
            let h = synthetic_rir(&mut rng, spec.rir_taps, delay);
            write_wav(&root.join(format!("rir/r{i}.wav")), "r", h);
            rirs += &format!("rir{i}\trir/r{i}.wav\n");
        }
        let mut noises = String::new();
        for i in 0..spec.noises {
            let len = (spec.noise_s * OPERATING_RATE as f64) as usize + 101 * i;
            write_wav(&root.join(format!("noise/n{i}.wav")), "n", random_signal(&mut rng, len));
            noises += &format!("noise{i}\tnoise/n{i}.wav\n");
        }
        let manifest_path = root.join("manifest.jsonl");
        let rir_list = root.join("rirs.tsv");
        let noise_list = root.join("noises.tsv");
        fs::write(&manifest_path, manifest).unwrap();
        fs::write(&rir_list, rirs).unwrap();
        fs::write(&noise_list, noises).unwrap();
        Self {
            dir,
            manifest: manifest_path,
            rir_list,
            noise_list,
        }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self, out: &str) -> RunConfig {
        RunConfig {
            manifest: Some(self.manifest.clone()),
            rir_list: Some(self.rir_list.clone()),
            noise_list: Some(self.noise_list.clone()),
            root: Some(self.root().to_path_buf()),
            out: Some(self.root().join(out)),
            seed: 1234,
            ..RunConfig::default()
        }
    }

    /// Base flags for the binary, without a subcommand.
    pub fn args(&self, out: &str) -> Vec<String> {
        vec![
            "--manifest".into(),
            self.manifest.display().to_string(),
            "--rir-list".into(),
            self.rir_list.display().to_string(),
            "--noise-list".into(),
            self.noise_list.display().to_string(),
            "--root".into(),
            self.root().display().to_string(),
            "--out".into(),
            self.root().join(out).display().to_string(),
            "--seed".into(),
            "1234".into(),
        ]
    }
}

/// Every file under `dir`, relative path and bytes, sorted by path.
pub fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                out.push((path.strip_prefix(base).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
