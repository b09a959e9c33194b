use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::fft::Fft;
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Scalar, Tensor};

/// Mono audio signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T = f32> {
    pub samples: Tensor<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        Ok(Self {
            samples: Tensor::new(&[n], samples)?,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[T] {
        self.samples.data()
    }

    pub fn scaled(&self, gain: T) -> Self {
        Self {
            samples: self.samples.map(|v| v * gain),
            sample_rate: self.sample_rate,
        }
    }

    /// First `len` samples.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        Self::new(self.samples()[..len.min(self.len())].to_vec(), self.sample_rate)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Periodic Hann window, `sin²(πn/N)`.
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients<T: Scalar>(self, n: usize) -> Vec<T> {
        match self {
            WindowKind::Hann => (0..n)
                .map(|i| {
                    let s = (std::f64::consts::PI * i as f64 / n as f64).sin();
                    T::of(s * s)
                })
                .collect(),
            WindowKind::Rectangular => vec![T::one(); n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: WindowKind,
    /// Reflect-pad the signal by `n_fft/2` on both sides so frames are time-centered.
    pub center: bool,
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        Self {
            n_fft,
            hop,
            window: WindowKind::Hann,
            center: true,
        }
    }

    /// Grid used by the spectral losses.
    pub fn loss_default() -> Self {
        Self::new(1024, 256)
    }

    /// Grid of the generator's synthesis head.
    pub fn synthesis_head() -> Self {
        Self::new(64, 16)
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() {
            return Err(Error::config(format!(
                "n_fft {} is not a power of two >= 2",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::config(format!(
                "hop {} must be in 1..=n_fft ({})",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    /// Checks that the squared-window overlap-add envelope never vanishes, which
    /// is what the normalized inverse needs to recover every sample.
    pub fn validate_synthesis(&self) -> Result<()> {
        self.validate()?;
        let w: Vec<f64> = self.window.coefficients(self.n_fft);
        for phase in 0..self.hop {
            let env: f64 = w.iter().skip(phase).step_by(self.hop).map(|v| v * v).sum();
            if env < 1e-10 {
                return Err(Error::config(format!(
                    "window {:?} with n_fft {} and hop {} violates the overlap-add condition at offset {phase}",
                    self.window, self.n_fft, self.hop
                )));
            }
        }
        Ok(())
    }
}

/// One-sided complex STFT stored in polar form, `bins × frames`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram<T = f32> {
    pub magnitude: Tensor<T>,
    pub phase: Tensor<T>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl<T: Scalar> ComplexSpectrogram<T> {
    pub fn new(magnitude: Tensor<T>, phase: Tensor<T>, config: StftConfig, sample_rate: u32) -> Result<Self> {
        config.validate()?;
        let (bins, _) = magnitude.dims2()?;
        if bins != config.bins() {
            return Err(Error::dim("ComplexSpectrogram", magnitude.shape(), &[config.bins()]));
        }
        if magnitude.shape() != phase.shape() {
            return Err(Error::dim("ComplexSpectrogram", magnitude.shape(), phase.shape()));
        }
        if magnitude.data().iter().any(|&m| m < T::zero()) {
            return Err(Error::Argument("negative spectrogram magnitude".into()));
        }
        Ok(Self {
            magnitude,
            phase,
            config,
            sample_rate,
        })
    }

    pub fn bins(&self) -> usize {
        self.magnitude.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.magnitude.shape()[1]
    }

    pub fn coefficient(&self, bin: usize, frame: usize) -> Complex<T> {
        let i = bin * self.frames() + frame;
        Complex::from_polar(self.magnitude.data()[i], self.phase.data()[i])
    }
}

fn reflect_pad<T: Scalar>(x: &[T], pad: usize) -> Result<Vec<T>> {
    let n = x.len();
    if pad > 0 && pad >= n {
        return Err(Error::config(format!(
            "signal of {n} samples too short for reflect padding of {pad}"
        )));
    }
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    Ok(out)
}

pub fn stft<T: Scalar>(x: &Waveform<T>, cfg: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    cfg.validate()?;
    let n_fft = cfg.n_fft;
    let signal = if cfg.center {
        reflect_pad(x.samples(), n_fft / 2)?
    } else {
        x.samples().to_vec()
    };
    if signal.len() < n_fft {
        return Err(Error::config(format!(
            "signal of {} samples shorter than n_fft {n_fft}",
            signal.len()
        )));
    }
    let frames = (signal.len() - n_fft) / cfg.hop + 1;
    let bins = cfg.bins();
    let window: Vec<T> = cfg.window.coefficients(n_fft);
    let fft = Fft::<T>::new(n_fft)?;

    let spectra = parallel::map_range(frames, |f| {
        let start = f * cfg.hop;
        let mut buf: Vec<Complex<T>> = signal[start..start + n_fft]
            .iter()
            .zip(&window)
            .map(|(&s, &w)| Complex::new(s * w, T::zero()))
            .collect();
        fft.forward(&mut buf);
        buf.truncate(bins);
        buf
    });

    let mut mag = vec![T::zero(); bins * frames];
    let mut phase = vec![T::zero(); bins * frames];
    for (f, spec) in spectra.iter().enumerate() {
        for (k, c) in spec.iter().enumerate() {
            mag[k * frames + f] = c.norm();
            phase[k * frames + f] = c.im.atan2(c.re);
        }
    }
    let magnitude = Tensor::new(&[bins, frames], mag)?.ensure_finite("stft")?;
    let phase = Tensor::new(&[bins, frames], phase)?;
    ComplexSpectrogram::new(magnitude, phase, *cfg, x.sample_rate)
}

/// Windowed inverse DFT of one frame: the term that frame contributes to the
/// overlap-add sum before envelope normalization.
pub fn synthesis_frame<T: Scalar>(spec: &ComplexSpectrogram<T>, frame: usize) -> Result<Vec<T>> {
    let fft = Fft::<T>::new(spec.config.n_fft)?;
    let window = spec.config.window.coefficients(spec.config.n_fft);
    Ok(frame_inverse(spec, frame, &fft, &window))
}

fn frame_inverse<T: Scalar>(spec: &ComplexSpectrogram<T>, frame: usize, fft: &Fft<T>, window: &[T]) -> Vec<T> {
    let n = spec.config.n_fft;
    let bins = spec.bins();
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for k in 0..bins {
        buf[k] = spec.coefficient(k, frame);
    }
    // DC and Nyquist must be real for a real signal.
    buf[0] = Complex::new(buf[0].re, T::zero());
    buf[n / 2] = Complex::new(buf[n / 2].re, T::zero());
    for k in 1..n / 2 {
        buf[n - k] = buf[k].conj();
    }
    fft.inverse(&mut buf);
    buf.iter().zip(window).map(|(c, &w)| c.re * w).collect()
}

/// Overlap-add inverse with squared-window normalization. Centered spectrograms
/// yield `hop·(frames−1)` samples; uncentered ones `n_fft + hop·(frames−1)`.
pub fn istft<T: Scalar>(spec: &ComplexSpectrogram<T>) -> Result<Waveform<T>> {
    let cfg = spec.config;
    cfg.validate_synthesis()?;
    let (n_fft, hop, frames) = (cfg.n_fft, cfg.hop, spec.frames());
    let fft = Fft::<T>::new(n_fft)?;
    let window: Vec<T> = cfg.window.coefficients(n_fft);

    let chunks = parallel::map_range(frames, |f| frame_inverse(spec, f, &fft, &window));
    let full = n_fft + hop * (frames - 1);
    let mut acc = vec![T::zero(); full];
    let mut env = vec![T::zero(); full];
    for (f, chunk) in chunks.iter().enumerate() {
        let start = f * hop;
        for (i, (&v, &w)) in chunk.iter().zip(&window).enumerate() {
            acc[start + i] = acc[start + i] + v;
            env[start + i] = env[start + i] + w * w;
        }
    }
    let tiny = T::of(1e-11);
    for (a, &e) in acc.iter_mut().zip(&env) {
        *a = if e > tiny { *a / e } else { T::zero() };
    }
    let out = if cfg.center {
        let pad = n_fft / 2;
        acc[pad..pad + hop * (frames - 1)].to_vec()
    } else {
        acc
    };
    if out.is_empty() {
        return Err(Error::Argument(
            "a centered spectrogram needs at least two frames to produce samples".into(),
        ));
    }
    let wav = Waveform::new(out, spec.sample_rate)?;
    if !wav.samples.is_finite() {
        return Err(Error::Numeric { stage: "istft".into() });
    }
    Ok(wav)
}
