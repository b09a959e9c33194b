use serde::{Deserialize, Serialize};

use super::stft::{stft, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::ops::matmul;
use crate::tensor::{Scalar, Tensor};

/// Amplitude floor applied before the logarithm.
pub const MEL_FLOOR: f64 = 1e-5;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels × (n_fft/2 + 1)`, with unit peak and centers
/// uniformly spaced on the mel scale.
pub fn mel_filterbank<T: Scalar>(sr: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64) -> Result<Tensor<T>> {
    let nyquist = sr as f64 / 2.0;
    if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(Error::config(format!(
            "mel band requires 0 <= f_min < f_max <= sr/2, got f_min={f_min}, f_max={f_max}, sr={sr}"
        )));
    }
    if n_mels == 0 || n_fft < 2 {
        return Err(Error::config("mel filterbank needs n_mels >= 1 and n_fft >= 2"));
    }
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * sr as f64 / n_fft as f64;

    let mut weights = vec![T::zero(); n_mels * bins];
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = bin_hz(k);
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            *w = T::of(rise.min(fall).max(0.0));
        }
        if row.iter().all(|&w| w == T::zero()) {
            return Err(Error::config(format!(
                "mel filter {m} ({left:.1}..{right:.1} Hz) covers no FFT bin; use fewer mels or a larger n_fft"
            )));
        }
    }
    Tensor::new(&[n_mels, bins], weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            hop: 256,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
        }
    }
}

impl MelConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig::new(self.n_fft, self.hop)
    }
}

/// Log-amplitude mel spectrogram, `n_mels × frames`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram<T = f32> {
    pub values: Tensor<T>,
    pub sample_rate: u32,
    pub hop: usize,
    pub n_mels: usize,
}

impl<T: Scalar> MelSpectrogram<T> {
    pub fn new(values: Tensor<T>, sample_rate: u32, hop: usize) -> Result<Self> {
        let (n_mels, _) = values.dims2()?;
        let values = values.ensure_finite("mel spectrogram")?;
        Ok(Self {
            values,
            sample_rate,
            hop,
            n_mels,
        })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }
}

pub fn mel_spectrogram<T: Scalar>(x: &Waveform<T>, cfg: &MelConfig) -> Result<MelSpectrogram<T>> {
    if x.sample_rate != cfg.sample_rate {
        return Err(Error::config(format!(
            "waveform sample rate {} does not match mel configuration {}",
            x.sample_rate, cfg.sample_rate
        )));
    }
    let spec = stft(x, &cfg.stft())?;
    let fb = mel_filterbank::<T>(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max)?;
    let floor = T::of(MEL_FLOOR);
    let values = matmul(&fb, &spec.magnitude)?.map(|v| v.max(floor).ln());
    MelSpectrogram::new(values, cfg.sample_rate, cfg.hop)
}
