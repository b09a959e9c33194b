//! Objective speech metrics: mel-cepstral distortion and F0 contour correlation.

use serde::{Deserialize, Serialize};

use crate::dsp::{mel_spectrogram, MelConfig, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cepstral coefficients compared by MCD (c₁…c₁₃; c₀ is skipped).
pub const MCD_COEFFS: usize = 13;

/// Orthonormal DCT-II of each row, keeping coefficients `1..=n_coeffs`.
pub fn dct_cepstra(log_mel: &Tensor<f64>, n_coeffs: usize) -> Result<Tensor<f64>> {
    let (frames, n) = log_mel.dims2()?;
    if n_coeffs >= n {
        return Err(Error::config(format!(
            "{n_coeffs} cepstral coefficients need more than {n} mel bins"
        )));
    }
    let scale = (2.0 / n as f64).sqrt();
    let basis: Vec<f64> = (1..=n_coeffs)
        .flat_map(|k| {
            (0..n).map(move |i| scale * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
        })
        .collect();
    let mut out = Vec::with_capacity(frames * n_coeffs);
    for f in 0..frames {
        let row = log_mel.row(f);
        for k in 0..n_coeffs {
            out.push(basis[k * n..(k + 1) * n].iter().zip(row).map(|(b, x)| b * x).sum());
        }
    }
    Tensor::new(&[frames, n_coeffs], out)
}

/// Mel cepstra `[frames × 13]` from the default log-mel analysis.
pub fn mel_cepstra(x: &Waveform) -> Result<Tensor<f64>> {
    let cfg = MelConfig {
        sample_rate: x.sample_rate,
        ..MelConfig::default()
    };
    let wide = Waveform {
        samples: x.samples.cast::<f64>(),
        sample_rate: x.sample_rate,
    };
    let mel = mel_spectrogram(&wide, &cfg)?;
    dct_cepstra(&mel.values.transpose()?, MCD_COEFFS)
}

/// Mean frame distortion `(10/ln 10)·√(2·Σ(c_d − c'_d)²)` in dB.
pub fn mcd_from_cepstra(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Argument(format!(
            "cepstra shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (frames, _) = a.dims2()?;
    let k = 10.0 / std::f64::consts::LN_10;
    let total: f64 = (0..frames)
        .map(|f| {
            let sq: f64 = a.row(f).iter().zip(b.row(f)).map(|(x, y)| (x - y).powi(2)).sum();
            k * (2.0 * sq).sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

/// Mel-cepstral distortion between two equal-length waveforms (no alignment).
pub fn mcd(x: &Waveform, y: &Waveform) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "waveform lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    mcd_from_cepstra(&mel_cepstra(x)?, &mel_cepstra(y)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Config {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    pub rms_floor: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            f_min: 50.0,
            f_max: 500.0,
            voicing_threshold: 0.3,
            rms_floor: 1e-4,
        }
    }
}

/// Per-frame F0 in Hz; 0 marks an unvoiced frame.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct F0Contour {
    pub values: Vec<f64>,
    pub hop: usize,
}

impl F0Contour {
    pub fn voiced_frames(&self) -> usize {
        self.values.iter().filter(|&&f| f > 0.0).count()
    }
}

fn normalized_acf(frame: &[f64], lag: usize) -> f64 {
    let n = frame.len() - lag;
    let (a, b) = (&frame[..n], &frame[lag..]);
    let num: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let den = (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|y| y * y).sum::<f64>()).sqrt();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn frame_f0(frame: &[f64], sr: f64, cfg: &F0Config) -> f64 {
    let rms = (frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64).sqrt();
    if rms < cfg.rms_floor {
        return 0.0;
    }
    let lo = (sr / cfg.f_max).floor() as usize;
    let hi = ((sr / cfg.f_min).ceil() as usize).min(frame.len().saturating_sub(2));
    if lo < 2 || hi <= lo {
        return 0.0;
    }
    // r[i] holds lag lo−1+i so every candidate has both neighbours.
    let r: Vec<f64> = (lo - 1..=hi + 1).map(|lag| normalized_acf(frame, lag)).collect();
    let best = r[1..r.len() - 1].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best < cfg.voicing_threshold {
        return 0.0;
    }
    // Shortest-lag local maximum close to the global peak avoids octave-down errors.
    let Some(i) = (1..r.len() - 1).find(|&i| r[i] >= r[i - 1] && r[i] >= r[i + 1] && r[i] >= 0.9 * best) else {
        return 0.0;
    };
    let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
    let curv = a - 2.0 * b + c;
    let delta = if curv < 0.0 {
        (0.5 * (a - c) / curv).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let lag = (lo - 1 + i) as f64 + delta;
    let f0 = sr / lag;
    if (cfg.f_min..=cfg.f_max).contains(&f0) {
        f0
    } else {
        0.0
    }
}

/// Autocorrelation pitch track over non-padded frames.
pub fn f0_contour(x: &Waveform, cfg: &F0Config) -> Result<F0Contour> {
    let sr = x.sample_rate as f64;
    let frame_len = (sr * cfg.frame_ms / 1000.0).floor() as usize;
    let hop = (sr * cfg.hop_ms / 1000.0).floor() as usize;
    if frame_len < 4 || hop == 0 || !(cfg.f_min > 0.0 && cfg.f_min < cfg.f_max) {
        return Err(Error::config("F0 analysis needs a positive frame, hop and search band"));
    }
    let samples: Vec<f64> = x.samples().iter().map(|&v| v as f64).collect();
    let frames = if samples.len() < frame_len {
        0
    } else {
        (samples.len() - frame_len) / hop + 1
    };
    let values = crate::parallel::map_range(frames, |f| frame_f0(&samples[f * hop..f * hop + frame_len], sr, cfg));
    Ok(F0Contour { values, hop })
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "sequence lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate(format!(
            "correlation needs at least 2 points, got {}",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Jointly voiced values of two contours, compared frame by frame over the shorter one.
pub fn joint_voiced(a: &F0Contour, b: &F0Contour) -> (Vec<f64>, Vec<f64>) {
    a.values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (*x, *y))
        .unzip()
}

pub fn contour_pearson(a: &F0Contour, b: &F0Contour) -> Result<f64> {
    let (x, y) = joint_voiced(a, b);
    pearson(&x, &y)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub mcd_db: f64,
    pub f0_pearson: f64,
    pub voiced_frames: usize,
    pub total_frames: usize,
}

/// MCD and F0 correlation of `hyp` against `reference`. Identical voiced
/// contours count as perfectly correlated even when their variance is zero.
pub fn metric_report(reference: &Waveform, hyp: &Waveform, cfg: &F0Config) -> Result<MetricReport> {
    let mcd_db = mcd(reference, hyp)?;
    let (fa, fb) = (f0_contour(reference, cfg)?, f0_contour(hyp, cfg)?);
    let (x, y) = joint_voiced(&fa, &fb);
    let f0_pearson = match pearson(&x, &y) {
        Err(Error::Degenerate(_)) if !x.is_empty() && x == y => 1.0,
        r => r?,
    };
    Ok(MetricReport {
        mcd_db,
        f0_pearson,
        voiced_frames: x.len(),
        total_frames: fa.values.len().min(fb.values.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(hz: f64, secs: f64, amp: f64) -> Waveform {
        let n = (22050.0 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| (amp * (2.0 * std::f64::consts::PI * hz * i as f64 / 22050.0).sin()) as f32)
                .collect(),
            22050,
        )
        .unwrap()
    }

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 22050).unwrap()
    }

    #[test]
    fn dct_matches_orthonormal_definition() {
        // Orthonormality: the full basis (k = 0..N) preserves energy.
        let n = 8;
        let x = Tensor::new(&[1, n], (0..n).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let c = dct_cepstra(&x, n - 1).unwrap();
        let c0 = x.data().iter().sum::<f64>() / (n as f64).sqrt();
        let energy: f64 = c.data().iter().map(|v| v * v).sum::<f64>() + c0 * c0;
        assert!((energy - x.data().iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
        // Constant rows have no energy beyond c₀.
        let flat = Tensor::new(&[1, 80], vec![3.0; 80]).unwrap();
        assert!(dct_cepstra(&flat, 13).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mcd_identities() {
        let (x, y) = (noise(8000, 1), noise(8000, 2));
        assert_eq!(mcd(&x, &x).unwrap(), 0.0);
        let (a, b) = (mcd(&x, &y).unwrap(), mcd(&y, &x).unwrap());
        assert!(a > 0.0 && (a - b).abs() < 1e-12);
        assert!(matches!(mcd(&x, &noise(10, 0)), Err(Error::Argument(_))));
    }

    #[test]
    fn uniform_cepstral_offset() {
        let c = mel_cepstra(&noise(6000, 3)).unwrap();
        let shifted = c.map(|v| v + 0.1);
        let expect = 10.0 / std::f64::consts::LN_10 * 0.1 * 26f64.sqrt();
        let got = mcd_from_cepstra(&c, &shifted).unwrap();
        assert!((got - expect).abs() < 1e-9);
        assert!((got - 2.2144).abs() < 1e-4);
    }

    #[test]
    fn sine_pitch_is_recovered() {
        let c = f0_contour(&tone(220.0, 1.0, 0.5), &F0Config::default()).unwrap();
        assert_eq!(c.hop, 220);
        assert!(c.values.len() > 90);
        for &f in &c.values[1..c.values.len() - 1] {
            assert!((f - 220.0).abs() < 2.0, "{f}");
        }
        let doubled = f0_contour(&tone(220.0, 1.0, 0.5).scaled(2.0), &F0Config::default()).unwrap();
        assert_eq!(doubled, c);
    }

    #[test]
    fn silence_is_unvoiced() {
        let c = f0_contour(&Waveform::new(vec![0.0; 22050], 22050).unwrap(), &F0Config::default()).unwrap();
        assert!(!c.values.is_empty());
        assert_eq!(c.voiced_frames(), 0);
    }

    #[test]
    fn chirp_is_nondecreasing() {
        let sr = 22050.0;
        let dur = 1.5;
        let samples: Vec<f32> = (0..(sr * dur) as usize)
            .map(|i| {
                let t = i as f64 / sr;
                // Phase of a linear sweep 100 → 300 Hz.
                let phase = 2.0 * std::f64::consts::PI * (100.0 * t + 0.5 * (200.0 / dur) * t * t);
                (0.5 * phase.sin()) as f32
            })
            .collect();
        let c = f0_contour(&Waveform::new(samples, 22050).unwrap(), &F0Config::default()).unwrap();
        let voiced: Vec<f64> = c.values.iter().copied().filter(|&f| f > 0.0).collect();
        assert!(voiced.len() as f64 > 0.9 * c.values.len() as f64);
        for w in voiced.windows(2) {
            assert!(w[1] >= w[0] - 3.0, "{} then {}", w[0], w[1]);
        }
        assert!(voiced[0] < 120.0 && *voiced.last().unwrap() > 280.0);
    }

    #[test]
    fn pearson_cases() {
        let a = [1.0, 4.0, 2.0, 8.0, 5.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let aff: Vec<f64> = a.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&a, &aff).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(Error::Degenerate(_))));
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn identical_signals_report() {
        let x = tone(200.0, 0.5, 0.3);
        let r = metric_report(&x, &x, &F0Config::default()).unwrap();
        assert_eq!(r.mcd_db, 0.0);
        assert_eq!(r.f0_pearson, 1.0);
        assert!(r.voiced_frames > 0 && r.voiced_frames <= r.total_frames);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn pearson_bounded_and_affine_invariant(
            a in proptest::collection::vec(-100.0f64..100.0, 3..40),
            s in 0.1f64..10.0, o in -50.0f64..50.0, seed in 0u64..100,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(r) = pearson(&a, &b) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let t: Vec<f64> = a.iter().map(|v| s * v + o).collect();
                prop_assert!((pearson(&t, &b).unwrap() - r).abs() < 1e-9);
            }
        }

        #[test]
        fn f0_is_amplitude_invariant(hz in 80.0f64..400.0, gain in 0.5f64..4.0) {
            let cfg = F0Config::default();
            let x = tone(hz, 0.2, 0.2);
            let y = tone(hz, 0.2, 0.2 * gain);
            let (a, b) = (f0_contour(&x, &cfg).unwrap(), f0_contour(&y, &cfg).unwrap());
            for (u, v) in a.values.iter().zip(&b.values) {
                prop_assert!((u - v).abs() < 1e-3 * u.max(1.0));
            }
        }
    }
}
