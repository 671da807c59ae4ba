//! Command-line front end.
//!
//! Exit codes: 0 success, 1 data errors, 2 configuration errors.

mod commands;
mod config;
mod pipeline;

pub use commands::{
    cmd_attn_skew, cmd_augment, cmd_features, cmd_verify, read_provenance, write_provenance, AttnSkewReport,
    AugmentSummary, CommandError, ModelSkewness, SnrCheck, VerifyReport, PROVENANCE_FILE, SNR_TOLERANCE_DB,
};
pub use config::{parse_specaugment, ConfigError, Mode, OutputKind, RunConfig};
pub use pipeline::{check_id, Augmenter, PipelineError, Provenance, UtteranceOutput};

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "pmct",
    version,
    about = "Patched multi-condition augmentation for ASR training data"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Augment every utterance in the manifest.
    Augment,
    /// Rebuild outputs from the provenance sidecar and compare bit for bit.
    Verify,
    /// Attention eigen-skewness for one model, or a baseline and a candidate.
    AttnSkew {
        /// Directories of attention tensor files; the first is the baseline.
        #[arg(required = true, num_args = 1..=2)]
        dirs: Vec<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Extract log-mel features (with optional SpecAugment) without waveform augmentation.
    Features,
}

#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rir_list: Option<PathBuf>,
    #[arg(long, global = true)]
    pub noise_list: Option<PathBuf>,
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "PMCT_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epoch: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Clean-patch probability in [0, 1], or "rand".
    #[arg(long, global = true)]
    pub pi: Option<String>,
    /// Patch length in seconds.
    #[arg(long, global = true)]
    pub patch_len: Option<f64>,
    #[arg(long, global = true)]
    pub p_reverb: Option<f64>,
    #[arg(long, global = true)]
    pub p_noise: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub snr_lo: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub snr_hi: Option<f64>,
    /// off, high, mid or low.
    #[arg(long, global = true)]
    pub specaugment: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub output_kind: Option<OutputKind>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub fail_fast: bool,
}

impl GlobalArgs {
    /// Defaults, then `--config`, then flags.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let paths = [
            (&self.manifest, &mut cfg.manifest),
            (&self.rir_list, &mut cfg.rir_list),
            (&self.noise_list, &mut cfg.noise_list),
            (&self.root, &mut cfg.root),
            (&self.out, &mut cfg.out),
        ];
        for (flag, slot) in paths {
            if let Some(p) = flag {
                *slot = Some(p.clone());
            }
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epoch {
            cfg.epoch = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = &self.pi {
            cfg.set("pi", v)?;
        }
        if let Some(v) = self.patch_len {
            cfg.mamp.patch_len_s = v;
        }
        if let Some(v) = self.p_reverb {
            cfg.mct.p_reverb = v;
        }
        if let Some(v) = self.p_noise {
            cfg.mct.p_noise = v;
        }
        if let Some(v) = self.snr_lo {
            cfg.set("snr-lo", &v.to_string())?;
        }
        if let Some(v) = self.snr_hi {
            cfg.set("snr-hi", &v.to_string())?;
        }
        if let Some(v) = &self.specaugment {
            cfg.specaugment = parse_specaugment(v)?;
        }
        if let Some(v) = self.output_kind {
            cfg.output_kind = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if self.fail_fast {
            cfg.fail_fast = true;
        }
        Ok(cfg)
    }
}

/// Parse `args` and run the selected command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let config = match cli.global.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match execute(&cli.command, &config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: &Command, config: &RunConfig) -> Result<i32, CommandError> {
    match command {
        Command::Augment | Command::Features => {
            let summary = if matches!(command, Command::Augment) {
                cmd_augment(config)?
            } else {
                cmd_features(config)?
            };
            println!(
                "{} succeeded, {} failed, {} out-of-range samples{}",
                summary.succeeded,
                summary.failed.len(),
                summary.out_of_range,
                if summary.aborted {
                    " (aborted by --fail-fast)"
                } else {
                    ""
                }
            );
            Ok(summary.exit_code())
        }
        Command::Verify => {
            let report = cmd_verify(config)?;
            println!(
                "checked {} utterance(s), {} mismatch(es), max SNR error {:.3e} dB",
                report.checked,
                report.mismatches.len(),
                report.max_snr_error()
            );
            if report.mismatches.is_empty() {
                println!("PASS");
                Ok(0)
            } else {
                Err(CommandError::MismatchFound(report.mismatches))
            }
        }
        Command::AttnSkew { dirs, json } => {
            let report = cmd_attn_skew(config, dirs)?;
            print!("{}", report.to_text());
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report).map_err(|e| CommandError::Output {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                fs::write(path, text).map_err(|e| CommandError::Output {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            }
            Ok(0)
        }
    }
}
