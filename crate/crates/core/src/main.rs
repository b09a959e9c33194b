use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ringformer::adversarial::{loss_report, LossWeights, MpdConfig};
use ringformer::attention::{AttentionMode, Partition};
use ringformer::dsp::{mel_spectrogram, MelConfig, MelSpectrogram};
use ringformer::generator::{
    benchmark_attention, benchmark_synthesis, build_generator, synthesize_traced, GeneratorConfig, SynthesisOptions,
};
use ringformer::io::{decode_mel, decode_wav, decode_weights, read_wav, save_weights, write_mel, write_wav, MEL_MAGIC};
use ringformer::metrics::{metric_report, F0Config};
use ringformer::selftest::{run_selftest, Corruption, Scale, SelfTestOptions};
use ringformer::{attention::ScoreTracker, Error, Result};

#[derive(Parser)]
#[command(
    name = "ringformer",
    version,
    about = "Ring-attention vocoder inference and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a log-mel spectrogram and write it as a MELF file.
    Mel { input: PathBuf, output: PathBuf },
    /// Synthesize a waveform from a MELF file or a WAV file.
    Vocode(VocodeArgs),
    /// Time ring and vanilla attention and write a CSV table.
    Bench(BenchArgs),
    /// Evaluate adversarial, spectral and feature-matching losses for a WAV pair.
    Losses {
        real: PathBuf,
        fake: PathBuf,
        report: PathBuf,
        /// Seed for the randomly initialized discriminators.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mel-cepstral distortion and F0 correlation of a hypothesis against a reference.
    Metrics {
        reference: PathBuf,
        hypothesis: PathBuf,
        report: PathBuf,
    },
    /// Run the built-in invariant suite.
    Selftest {
        /// Run reduced sweeps.
        #[arg(long)]
        quick: bool,
        #[arg(long, hide = true, value_enum)]
        corrupt: Option<Corruption>,
    },
}

#[derive(Args)]
struct GeneratorArgs {
    /// JSON file with generator config fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Split attention across this many simulated devices.
    #[arg(long, conflicts_with = "block_len")]
    devices: Option<usize>,
    /// Fixed ring block length (device count follows the sequence length).
    #[arg(long)]
    block_len: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    attention: Option<AttentionMode>,
}

impl GeneratorArgs {
    fn resolve(&self, base: Option<GeneratorConfig>) -> Result<GeneratorConfig> {
        let mut cfg = match (base, &self.config) {
            (Some(cfg), _) => cfg,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            (None, None) => GeneratorConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = self.devices {
            cfg.ring = Partition::Devices(n);
        }
        if let Some(b) = self.block_len {
            cfg.ring = Partition::BlockLen(b);
        }
        if let Some(mode) = self.attention {
            cfg.attention = mode;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_mode(s: &str) -> std::result::Result<AttentionMode, String> {
    match s {
        "ring" => Ok(AttentionMode::Ring),
        "vanilla" => Ok(AttentionMode::Vanilla),
        _ => Err(format!("unknown attention mode {s:?} (ring or vanilla)")),
    }
}

#[derive(Args)]
struct VocodeArgs {
    input: PathBuf,
    output: PathBuf,
    /// RFW1 weight file; without it weights are drawn from the seed.
    #[arg(long, conflicts_with_all = ["seed", "config"])]
    weights: Option<PathBuf>,
    /// Also write the weights used to this RFW1 file.
    #[arg(long)]
    save_weights: Option<PathBuf>,
    #[command(flatten)]
    generator: GeneratorArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [512usize, 1024, 2048])]
    seq_lens: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 512])]
    block_lens: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Also benchmark full synthesis on this many random mel frames (JSON to stdout).
    #[arg(long)]
    synthesis_frames: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Mel { input, output } => cmd_mel(&input, &output),
        Command::Vocode(args) => cmd_vocode(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Losses {
            real,
            fake,
            report,
            seed,
        } => cmd_losses(&real, &fake, &report, seed),
        Command::Metrics {
            reference,
            hypothesis,
            report,
        } => cmd_metrics(&reference, &hypothesis, &report),
        Command::Selftest { quick, corrupt } => return cmd_selftest(quick, corrupt),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Argument(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_mel(input: &Path, output: &Path) -> Result<()> {
    let wav = read_wav(input)?;
    let mel = mel_spectrogram(&wav, &MelConfig::default())?;
    write_mel(output, &mel.values)?;
    println!("F={} T={}", mel.n_mels, mel.frames());
    Ok(())
}

/// Loads a MELF file, or analyses a WAV file with the default mel settings.
fn load_mel(path: &Path) -> Result<MelSpectrogram> {
    let bytes = read_bytes(path)?;
    let mel_cfg = MelConfig::default();
    if bytes.starts_with(MEL_MAGIC) {
        MelSpectrogram::new(decode_mel(&bytes, path)?, mel_cfg.sample_rate, mel_cfg.hop)
    } else {
        mel_spectrogram(&decode_wav(&bytes, path)?, &mel_cfg)
    }
}

fn cmd_vocode(args: &VocodeArgs) -> Result<()> {
    let mel = load_mel(&args.input)?;
    let weights = match &args.weights {
        Some(path) => {
            let mut w = decode_weights(&read_bytes(path)?, path)?;
            w.config = args.generator.resolve(Some(w.config.clone()))?;
            w
        }
        None => build_generator(&args.generator.resolve(None)?)?,
    };
    if let Some(path) = &args.save_weights {
        save_weights(path, &weights)?;
    }
    let wav = synthesize_traced(
        &mel,
        &weights,
        SynthesisOptions::from_config(&weights.config),
        &ScoreTracker::new(),
    )?;
    let info = write_wav(&args.output, &wav)?;
    if info.normalized {
        log::warn!("output exceeded full scale and was peak-normalized to 0.95");
    }
    println!("frames={} samples={}", mel.frames(), info.samples);
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    if args.repeats < 3 {
        return Err(Error::Argument(format!(
            "--repeats must be at least 3, got {}",
            args.repeats
        )));
    }
    let cfg = match &args.config {
        Some(path) => GeneratorArgs {
            config: Some(path.clone()),
            seed: None,
            devices: None,
            block_len: None,
            attention: None,
        }
        .resolve(None)?,
        None => GeneratorConfig::default(),
    };
    let width = cfg.stage_width(cfg.num_stages());
    let heads = cfg.conformer.num_heads;
    // Each final-stage token covers istft_hop output samples.
    let audio_secs = |t: usize| (t * cfg.istft_hop) as f64 / MelConfig::default().sample_rate as f64;
    let mut csv = String::from("seq_len,block_len,mode,median_ms,peak_score_elements,realtime_factor\n");
    for &t in &args.seq_lens {
        for &b in &args.block_lens {
            for mode in [AttentionMode::Ring, AttentionMode::Vanilla] {
                let r = benchmark_attention(t, Partition::BlockLen(b), width, heads, mode, args.repeats, cfg.seed)?;
                let name = match mode {
                    AttentionMode::Ring => "ring",
                    AttentionMode::Vanilla => "vanilla",
                };
                let rtf = audio_secs(t) / (r.median_ms / 1e3);
                csv.push_str(&format!(
                    "{t},{},{name},{:.3},{},{rtf:.3}\n",
                    r.block_len, r.median_ms, r.peak_score_elements
                ));
                eprintln!(
                    "T={t} b={} {name}: {:.2} ms, peak {}",
                    r.block_len, r.median_ms, r.peak_score_elements
                );
            }
        }
    }
    std::fs::write(&args.output, csv).map_err(|e| Error::Io {
        path: args.output.clone(),
        source: e,
    })?;
    if let Some(frames) = args.synthesis_frames {
        let report = benchmark_synthesis(&cfg, frames, args.repeats)?;
        let mut out = std::io::stdout().lock();
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    }
    Ok(())
}

fn cmd_losses(real: &Path, fake: &Path, report: &Path, seed: u64) -> Result<()> {
    let (mut a, mut b) = (read_wav(real)?, read_wav(fake)?);
    let n = a.len().min(b.len());
    if a.len() != b.len() {
        log::warn!("trimming to the shorter input: {n} samples");
        a = a.truncated(n)?;
        b = b.truncated(n)?;
    }
    let r = loss_report(&a, &b, &MpdConfig::default(), seed, &LossWeights::default())?;
    write_json(report, &r)?;
    println!("l_total={:.6}", r.l_total);
    Ok(())
}

fn cmd_metrics(reference: &Path, hypothesis: &Path, report: &Path) -> Result<()> {
    let r = metric_report(&read_wav(reference)?, &read_wav(hypothesis)?, &F0Config::default())?;
    write_json(report, &r)?;
    println!("mcd_db={:.4} f0_pearson={:.4}", r.mcd_db, r.f0_pearson);
    Ok(())
}

fn cmd_selftest(quick: bool, corrupt: Option<Corruption>) -> ExitCode {
    let scale = if quick { Scale::Quick } else { Scale::Full };
    let report = run_selftest(SelfTestOptions { scale, corrupt });
    for check in &report.checks {
        println!("{check}");
    }
    if report.passed() {
        println!("selftest passed in {:.1} s", report.seconds);
        ExitCode::SUCCESS
    } else {
        eprintln!("selftest failed: {}", report.failures().join(", "));
        ExitCode::from(5)
    }
}
