//! Spectral analysis and synthesis.

pub mod fft;
mod mel;
mod stft;

pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelConfig, MelSpectrogram, MEL_FLOOR};
pub use stft::{istft, stft, synthesis_frame, ComplexSpectrogram, StftConfig, Waveform, WindowKind};
