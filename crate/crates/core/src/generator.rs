//! Mel-to-waveform generator: input convolution, two upsampling stages with
//! snake activations and Conformer stacks, output convolution, and an iSTFT
//! synthesis head.

use std::f32::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{
    multi_head_attention, peak_score_elements, AttentionConfig, AttentionMode, Partition, ScoreTracker,
};
use crate::conformer::{conformer_stack, BlockContext, ConformerConfig, ConformerWeights};
use crate::dsp::{istft, ComplexSpectrogram, MelConfig, MelSpectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::{conv1d, conv_transpose1d, snake, Conv1dParams};
use crate::tensor::Tensor;

/// Kernel of the input and output convolutions (padding `kernel/2`).
pub const IO_KERNEL: usize = 7;
/// Largest log-magnitude passed to `exp` by the synthesis head.
pub const LOG_MAGNITUDE_CLAMP: f32 = 6.0;

/// Conformer settings shared by every stage; the width is set per stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConformerSettings {
    pub num_heads: usize,
    pub num_layers: usize,
    pub depthwise_kernel: usize,
    pub dropout: f32,
}

impl Default for ConformerSettings {
    fn default() -> Self {
        let c = ConformerConfig::new(8);
        Self {
            num_heads: c.num_heads,
            num_layers: c.num_layers,
            depthwise_kernel: c.depthwise_kernel,
            dropout: c.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub upsample_rates: Vec<usize>,
    pub upsample_kernels: Vec<usize>,
    pub input_channels: usize,
    pub output_channels: usize,
    pub istft_n_fft: usize,
    pub istft_hop: usize,
    pub n_mels: usize,
    pub conformer: ConformerSettings,
    pub ring: Partition,
    pub attention: AttentionMode,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            upsample_rates: vec![4, 4],
            upsample_kernels: vec![8, 8],
            input_channels: 512,
            output_channels: 66,
            istft_n_fft: 64,
            istft_hop: 16,
            n_mels: 80,
            conformer: ConformerSettings::default(),
            ring: Partition::BlockLen(512),
            attention: AttentionMode::Ring,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn num_stages(&self) -> usize {
        self.upsample_rates.len()
    }

    /// Channel width after stage `i` (1-based); stage 0 is the input convolution.
    pub fn stage_width(&self, i: usize) -> usize {
        self.input_channels >> i
    }

    /// Output samples per mel frame.
    pub fn samples_per_frame(&self) -> usize {
        self.upsample_rates.iter().product::<usize>() * self.istft_hop
    }

    pub fn stage_conformer(&self, i: usize) -> ConformerConfig {
        ConformerConfig {
            dim: self.stage_width(i),
            num_heads: self.conformer.num_heads,
            num_layers: self.conformer.num_layers,
            depthwise_kernel: self.conformer.depthwise_kernel,
            dropout: self.conformer.dropout,
        }
    }

    pub fn istft_config(&self) -> StftConfig {
        StftConfig::new(self.istft_n_fft, self.istft_hop)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |what: String| Err(Error::config(what));
        if self.upsample_rates.is_empty() || self.upsample_rates.len() != self.upsample_kernels.len() {
            return fail(format!(
                "upsample_rates {:?} and upsample_kernels {:?} must be non-empty and of equal length",
                self.upsample_rates, self.upsample_kernels
            ));
        }
        for (&u, &k) in self.upsample_rates.iter().zip(&self.upsample_kernels) {
            if u == 0 || k < u || (k - u) % 2 != 0 {
                return fail(format!(
                    "upsample kernel {k} with rate {u}: need kernel >= rate and an even difference for exact ×{u} output"
                ));
            }
        }
        let bins = self.istft_n_fft / 2 + 1;
        if self.output_channels != 2 * bins {
            return fail(format!(
                "output_channels {} violates output_channels == 2·(istft_n_fft/2 + 1) = {}",
                self.output_channels,
                2 * bins
            ));
        }
        self.istft_config().validate_synthesis()?;
        let mel_hop = MelConfig::default().hop;
        if self.samples_per_frame() != mel_hop {
            return fail(format!(
                "product(upsample_rates)·istft_hop = {} must equal the mel hop {mel_hop}",
                self.samples_per_frame()
            ));
        }
        if self.n_mels == 0 {
            return fail("n_mels must be positive".into());
        }
        let stages = self.num_stages();
        if self.input_channels == 0 || !self.input_channels.is_multiple_of(1 << stages) {
            return fail(format!(
                "input_channels {} must be divisible by 2^{stages} so each stage halves the width",
                self.input_channels
            ));
        }
        for i in 1..=stages {
            self.stage_conformer(i).validate()?;
        }
        self.ring.block_len(1)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleStage {
    /// `[C_in × C_out × K]`
    pub weight: Tensor,
    pub bias: Tensor,
    /// Per-channel snake frequency.
    pub alpha: Tensor,
    pub conformer: ConformerWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorWeights {
    pub config: GeneratorConfig,
    /// `[input_channels × n_mels × 7]`
    pub input_weight: Tensor,
    pub input_bias: Tensor,
    pub stages: Vec<UpsampleStage>,
    /// `[output_channels × last_width × 7]`
    pub output_weight: Tensor,
    pub output_bias: Tensor,
}

/// Deterministically initializes every array from `cfg.seed`.
pub fn build_generator(cfg: &GeneratorConfig) -> Result<GeneratorWeights> {
    cfg.validate()?;
    let mut init = Initializer::new(cfg.seed);
    let c0 = cfg.input_channels;
    let input_fan = cfg.n_mels * IO_KERNEL;
    let input_weight = init.uniform(&[c0, cfg.n_mels, IO_KERNEL], input_fan);
    let input_bias = init.uniform(&[c0], input_fan);
    let mut stages = Vec::with_capacity(cfg.num_stages());
    for (i, (&u, &k)) in cfg.upsample_rates.iter().zip(&cfg.upsample_kernels).enumerate() {
        let (c_in, c_out) = (cfg.stage_width(i), cfg.stage_width(i + 1));
        // Each output sample of a stride-u transposed conv sees c_in·k/u taps.
        let fan = c_in * k / u;
        stages.push(UpsampleStage {
            weight: init.uniform(&[c_in, c_out, k], fan),
            bias: init.uniform(&[c_out], fan),
            alpha: Tensor::full(&[c_out], 1.0),
            conformer: ConformerWeights::init(&cfg.stage_conformer(i + 1), &mut init)?,
        });
    }
    let last = cfg.stage_width(cfg.num_stages());
    let output_fan = last * IO_KERNEL;
    Ok(GeneratorWeights {
        config: cfg.clone(),
        input_weight,
        input_bias,
        stages,
        output_weight: init.uniform(&[cfg.output_channels, last, IO_KERNEL], output_fan),
        output_bias: init.uniform(&[cfg.output_channels], output_fan),
    })
}

impl GeneratorWeights {
    pub fn visit(&self, f: &mut dyn FnMut(String, &Tensor)) {
        f("input.weight".into(), &self.input_weight);
        f("input.bias".into(), &self.input_bias);
        for (i, s) in self.stages.iter().enumerate() {
            f(format!("stage{i}.upsample.weight"), &s.weight);
            f(format!("stage{i}.upsample.bias"), &s.bias);
            f(format!("stage{i}.snake.alpha"), &s.alpha);
            s.conformer.visit(&format!("stage{i}.conformer"), f);
        }
        f("output.weight".into(), &self.output_weight);
        f("output.bias".into(), &self.output_bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        f("input.weight".into(), &mut self.input_weight);
        f("input.bias".into(), &mut self.input_bias);
        for (i, s) in self.stages.iter_mut().enumerate() {
            f(format!("stage{i}.upsample.weight"), &mut s.weight);
            f(format!("stage{i}.upsample.bias"), &mut s.bias);
            f(format!("stage{i}.snake.alpha"), &mut s.alpha);
            s.conformer.visit_mut(&format!("stage{i}.conformer"), f);
        }
        f("output.weight".into(), &mut self.output_weight);
        f("output.bias".into(), &mut self.output_bias);
    }

    /// `(name, shape)` of every array, in file order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t.shape().to_vec())));
        out
    }
}

/// Total scalar parameters across all arrays.
pub fn param_count(w: &GeneratorWeights) -> usize {
    let mut n = 0;
    w.visit(&mut |_, t| n += t.len());
    n
}

/// Runtime overrides for a synthesis call.
#[derive(Clone, Copy, Debug)]
pub struct SynthesisOptions {
    pub partition: Partition,
    pub mode: AttentionMode,
}

impl SynthesisOptions {
    pub fn from_config(cfg: &GeneratorConfig) -> Self {
        Self {
            partition: cfg.ring,
            mode: cfg.attention,
        }
    }
}

/// Tags a numeric failure with the pipeline stage it surfaced in.
fn staged<T>(r: Result<T>, stage: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numeric { stage: inner } => Error::Numeric {
            stage: format!("{stage} ({inner})"),
        },
        e => e,
    })
}

/// Left reflection pad by one column of a `C×L` tensor.
fn reflect_pad_left(x: &Tensor) -> Result<Tensor> {
    let (c, l) = x.dims2()?;
    if l < 2 {
        return Err(Error::config("sequence too short for reflection padding"));
    }
    let d = x.data();
    Tensor::new(
        &[c, l + 1],
        (0..c)
            .flat_map(|r| {
                let row = &d[r * l..(r + 1) * l];
                std::iter::once(row[1]).chain(row.iter().copied())
            })
            .collect(),
    )
}

pub fn synthesize(mel: &MelSpectrogram, w: &GeneratorWeights) -> Result<Waveform> {
    synthesize_traced(mel, w, SynthesisOptions::from_config(&w.config), &ScoreTracker::new())
}

/// Synthesis with explicit attention settings and score-buffer accounting.
pub fn synthesize_traced(
    mel: &MelSpectrogram,
    w: &GeneratorWeights,
    opts: SynthesisOptions,
    tracker: &ScoreTracker,
) -> Result<Waveform> {
    let cfg = &w.config;
    let (f, t) = mel.values.dims2()?;
    if f != cfg.n_mels {
        return Err(Error::dim("synthesize: mel bins", mel.values.shape(), &[cfg.n_mels, t]));
    }
    let ctx = BlockContext {
        partition: opts.partition,
        mode: opts.mode,
        tracker,
        dropout_seed: None,
    };
    let mut x = staged(
        conv1d(
            &mel.values,
            &w.input_weight,
            Some(&w.input_bias),
            Conv1dParams::padded(IO_KERNEL / 2),
        ),
        "input conv",
    )?;
    for (i, (stage, (&u, &k))) in w
        .stages
        .iter()
        .zip(cfg.upsample_rates.iter().zip(&cfg.upsample_kernels))
        .enumerate()
    {
        let name = format!("stage {} upsample", i + 1);
        let up = staged(
            conv_transpose1d(&x, &stage.weight, Some(&stage.bias), u, (k - u) / 2),
            &name,
        )?;
        let act = staged(snake(&up, stage.alpha.data()), &name)?;
        let seq = staged(
            conformer_stack(&act.transpose()?, &stage.conformer, &ctx),
            &format!("stage {} conformer", i + 1),
        )?;
        x = seq.transpose()?;
    }
    // One extra frame so the centered iSTFT yields exactly samples_per_frame·T samples.
    let padded = reflect_pad_left(&x)?;
    let head = staged(
        conv1d(
            &padded,
            &w.output_weight,
            Some(&w.output_bias),
            Conv1dParams::padded(IO_KERNEL / 2),
        ),
        "output conv",
    )?;
    let bins = cfg.output_channels / 2;
    let magnitude = head.slice_rows(0, bins)?.map(|m| m.min(LOG_MAGNITUDE_CLAMP).exp());
    let phase = head.slice_rows(bins, 2 * bins)?.map(|p| PI * p.tanh());
    let spec = ComplexSpectrogram::new(magnitude, phase, cfg.istft_config(), mel.sample_rate)?;
    let wav = staged(istft(&spec), "synthesis head")?;
    debug_assert_eq!(wav.len(), cfg.samples_per_frame() * t);
    Ok(wav)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionBenchmark {
    pub mode: AttentionMode,
    pub seq_len: usize,
    pub block_len: usize,
    pub median_ms: f64,
    pub peak_score_elements: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthesisBenchmark {
    pub frames: usize,
    pub samples: usize,
    pub repeats: usize,
    /// Median seconds per synthesis.
    pub wall_time: f64,
    pub samples_per_sec: f64,
    pub realtime_factor: f64,
    pub peak_score_elements: usize,
    pub attention: Vec<AttentionBenchmark>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times one multi-head attention call over random projections.
pub fn benchmark_attention(
    seq_len: usize,
    partition: Partition,
    width: usize,
    num_heads: usize,
    mode: AttentionMode,
    repeats: usize,
    seed: u64,
) -> Result<AttentionBenchmark> {
    if repeats == 0 {
        return Err(Error::Argument("repeats must be positive".into()));
    }
    let cfg = AttentionConfig::for_layer(seq_len, width, num_heads, partition)?;
    let mut init = Initializer::new(seed);
    let [q, k, v] = std::array::from_fn(|_| init.uniform(&[seq_len, width], 1));
    let tracker = ScoreTracker::new();
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        multi_head_attention(&q, &k, &v, &cfg, mode, &tracker)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    debug_assert_eq!(tracker.peak(), peak_score_elements(&cfg, mode));
    Ok(AttentionBenchmark {
        mode,
        seq_len,
        block_len: cfg.block_len,
        median_ms: median(times),
        peak_score_elements: tracker.peak(),
    })
}

/// Median-of-`repeats` synthesis timing on a random mel of `frames` frames,
/// plus ring and vanilla attention timings at the final-stage sequence length.
pub fn benchmark_synthesis(cfg: &GeneratorConfig, frames: usize, repeats: usize) -> Result<SynthesisBenchmark> {
    if repeats < 3 {
        return Err(Error::Argument(format!(
            "benchmark needs at least 3 repeats, got {repeats}"
        )));
    }
    if frames == 0 {
        return Err(Error::Argument("benchmark needs at least one mel frame".into()));
    }
    let w = build_generator(cfg)?;
    let mut init = Initializer::new(cfg.seed ^ 0x5eed);
    let mel = MelSpectrogram::new(
        init.uniform(&[cfg.n_mels, frames], 1).map(|v| 4.0 * v - 4.0),
        MelConfig::default().sample_rate,
        MelConfig::default().hop,
    )?;
    let tracker = ScoreTracker::new();
    let opts = SynthesisOptions::from_config(cfg);
    let mut times = Vec::with_capacity(repeats);
    let mut samples = 0;
    for _ in 0..repeats {
        let start = Instant::now();
        samples = synthesize_traced(&mel, &w, opts, &tracker)?.len();
        times.push(start.elapsed().as_secs_f64());
    }
    let wall_time = median(times);
    let audio_secs = samples as f64 / mel.sample_rate as f64;

    let seq_len = frames * cfg.upsample_rates.iter().product::<usize>();
    let width = cfg.stage_width(cfg.num_stages());
    let attention = [AttentionMode::Ring, AttentionMode::Vanilla]
        .into_iter()
        .map(|mode| {
            benchmark_attention(
                seq_len,
                cfg.ring,
                width,
                cfg.conformer.num_heads,
                mode,
                repeats,
                cfg.seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthesisBenchmark {
        frames,
        samples,
        repeats,
        wall_time,
        samples_per_sec: samples as f64 / wall_time,
        realtime_factor: audio_secs / wall_time,
        peak_score_elements: tracker.peak(),
        attention,
    })
}
