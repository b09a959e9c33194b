//! Loss evaluators for adversarial, spectral and feature-matching objectives,
//! plus a forward-only multi-period discriminator that supplies their inputs.

mod mpd;

pub use mpd::{
    conv_height, fold_periods, mpd_forward, ConvLayer, DiscriminatorOutput, Mpd, MpdConfig, PeriodDiscriminator,
};

use serde::{Deserialize, Serialize};

use crate::dsp::{stft, ComplexSpectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Magnitudes below this are treated as phase-less.
pub const PHASE_MAGNITUDE_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda_sd: f64,
    pub lambda_fm: f64,
    pub lambda_recon: f64,
    pub lambda_kl: f64,
    pub lambda_dur: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda_sd: 0.7,
            lambda_fm: 1.0,
            lambda_recon: 45.0,
            lambda_kl: 1.0,
            lambda_dur: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        let lambdas = [
            self.lambda_sd,
            self.lambda_fm,
            self.lambda_recon,
            self.lambda_kl,
            self.lambda_dur,
        ];
        if lambdas.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        Ok(())
    }
}

/// Score maps of one discriminator family, one entry per sub-discriminator.
#[derive(Clone, Debug, Default)]
pub struct FamilyScores {
    pub real: Vec<Tensor>,
    /// Fake scores as seen by the discriminator update.
    pub fake_for_d: Vec<Tensor>,
    /// Fake scores as seen by the generator update.
    pub fake_for_g: Vec<Tensor>,
}

fn mean_of<T: Scalar>(t: &Tensor<T>, f: impl Fn(f64) -> f64) -> f64 {
    t.data().iter().map(|&v| f(v.as_f64())).sum::<f64>() / t.len() as f64
}

fn family_terms(s: &FamilyScores, family: &str) -> Result<(f64, f64)> {
    if s.real.is_empty() || s.fake_for_d.is_empty() || s.fake_for_g.is_empty() {
        return Err(Error::Argument(format!(
            "empty score list for discriminator family {family}"
        )));
    }
    if s.real.len() != s.fake_for_d.len() {
        return Err(Error::Argument(format!(
            "family {family}: {} real vs {} fake score maps",
            s.real.len(),
            s.fake_for_d.len()
        )));
    }
    let n_g = s.fake_for_g.len() as f64;
    let l_g = s
        .fake_for_g
        .iter()
        .map(|d| mean_of(d, |v| (1.0 - v).powi(2)))
        .sum::<f64>()
        / n_g;
    let n_d = s.real.len() as f64;
    let l_d = s
        .real
        .iter()
        .zip(&s.fake_for_d)
        .map(|(r, f)| mean_of(r, |v| (1.0 - v).powi(2)) + mean_of(f, |v| v * v))
        .sum::<f64>()
        / n_d;
    Ok((l_g, l_d))
}

/// Least-squares generator and discriminator losses, `(L_G, L_D)`, with family
/// `theta` weighted by `alpha` and `psi` by `1 − alpha`. Sub-discriminator
/// losses are averaged within each family.
pub fn adversarial_losses(theta: &FamilyScores, psi: &FamilyScores, alpha: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha {alpha} outside [0, 1]")));
    }
    let (g_t, d_t) = family_terms(theta, "theta")?;
    let (g_p, d_p) = family_terms(psi, "psi")?;
    Ok((alpha * g_t + (1.0 - alpha) * g_p, alpha * d_t + (1.0 - alpha) * d_p))
}

fn spectra<T: Scalar>(x: &Waveform<T>, y: &Waveform<T>) -> Result<(ComplexSpectrogram<T>, ComplexSpectrogram<T>)> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "waveform lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let cfg = StftConfig::loss_default();
    Ok((stft(x, &cfg)?, stft(y, &cfg)?))
}

/// Mean absolute difference of STFT magnitudes.
pub fn magnitude_loss<T: Scalar>(x: &Waveform<T>, y: &Waveform<T>) -> Result<f64> {
    let (sx, sy) = spectra(x, y)?;
    let n = sx.magnitude.len() as f64;
    Ok(sx
        .magnitude
        .data()
        .iter()
        .zip(sy.magnitude.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
        .sum::<f64>()
        / n)
}

/// Mean cosine distance between unit-normalized spectra over bins where both
/// magnitudes clear [`PHASE_MAGNITUDE_FLOOR`].
pub fn phase_loss<T: Scalar>(x: &Waveform<T>, y: &Waveform<T>) -> Result<f64> {
    let (sx, sy) = spectra(x, y)?;
    let (mut sum, mut count) = (0.0, 0usize);
    let (mx, my) = (sx.magnitude.data(), sy.magnitude.data());
    let (px, py) = (sx.phase.data(), sy.phase.data());
    for i in 0..mx.len() {
        if mx[i].as_f64() < PHASE_MAGNITUDE_FLOOR || my[i].as_f64() < PHASE_MAGNITUDE_FLOOR {
            continue;
        }
        sum += 1.0 - (px[i].as_f64() - py[i].as_f64()).cos();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate(
            "every spectral bin is below the phase magnitude floor".into(),
        ));
    }
    Ok(sum / count as f64)
}

/// Sum of magnitude and phase losses.
pub fn spectral_decomposition_loss<T: Scalar>(x: &Waveform<T>, y: &Waveform<T>) -> Result<(f64, f64)> {
    Ok((magnitude_loss(x, y)?, phase_loss(x, y)?))
}

/// Per-layer mean ℓ1 feature distance, summed over layers and averaged over
/// sub-discriminators.
pub fn feature_matching_loss(real: &[DiscriminatorOutput], fake: &[DiscriminatorOutput]) -> Result<f64> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::Argument(format!(
            "feature lists must be non-empty and equal in length ({} vs {})",
            real.len(),
            fake.len()
        )));
    }
    let mut total = 0.0;
    for (k, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.features.is_empty() || r.features.len() != f.features.len() {
            return Err(Error::Argument(format!("sub-discriminator {k}: layer counts differ")));
        }
        for (a, b) in r.features.iter().zip(&f.features) {
            if a.shape() != b.shape() {
                return Err(Error::Argument(format!(
                    "sub-discriminator {k}: feature shapes {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let l1: f64 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| (x as f64 - y as f64).abs())
                .sum();
            total += l1 / a.len() as f64;
        }
    }
    Ok(total / real.len() as f64)
}

/// Unweighted loss terms. `recon`, `kl` and `dur` come from the caller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv: f64,
    pub sd: f64,
    pub fm: f64,
    pub recon: f64,
    pub kl: f64,
    pub dur: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TotalLoss {
    pub total: f64,
    /// `(name, weighted value)` per term.
    pub terms: Vec<(&'static str, f64)>,
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<TotalLoss> {
    w.validate()?;
    let raw = [
        ("adv", c.adv, 1.0),
        ("sd", c.sd, w.lambda_sd),
        ("fm", c.fm, w.lambda_fm),
        ("recon", c.recon, w.lambda_recon),
        ("kl", c.kl, w.lambda_kl),
        ("dur", c.dur, w.lambda_dur),
    ];
    if let Some((name, v, _)) = raw.iter().find(|(_, v, _)| !(*v >= 0.0)) {
        return Err(Error::Argument(format!(
            "loss component {name} = {v} must be nonnegative"
        )));
    }
    let terms: Vec<_> = raw.iter().map(|&(n, v, l)| (n, l * v)).collect();
    Ok(TotalLoss {
        total: terms.iter().map(|t| t.1).sum(),
        terms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub l_g: f64,
    pub l_d: f64,
    pub l_mag: f64,
    pub l_phase: f64,
    pub l_sd: f64,
    pub l_fm: f64,
    pub l_total: f64,
    pub weights: LossWeights,
}

/// Evaluates every loss for a (real, fake) pair using two seeded
/// discriminator families: an MPD and a second MPD-shaped stand-in.
pub fn loss_report(
    real: &Waveform,
    fake: &Waveform,
    mpd: &MpdConfig,
    seed: u64,
    weights: &LossWeights,
) -> Result<LossReport> {
    weights.validate()?;
    let theta = Mpd::new(mpd, seed)?;
    let psi = Mpd::new(mpd, seed.wrapping_add(1))?;
    let score = |d: &Mpd, x: &Waveform| -> Result<Vec<DiscriminatorOutput>> { d.forward(x) };
    let (t_real, t_fake) = (score(&theta, real)?, score(&theta, fake)?);
    let (p_real, p_fake) = (score(&psi, real)?, score(&psi, fake)?);
    let maps = |v: &[DiscriminatorOutput]| v.iter().map(|o| o.score_map.clone()).collect::<Vec<_>>();
    let family = |r: &[DiscriminatorOutput], f: &[DiscriminatorOutput]| FamilyScores {
        real: maps(r),
        fake_for_d: maps(f),
        fake_for_g: maps(f),
    };
    let (l_g, l_d) = adversarial_losses(&family(&t_real, &t_fake), &family(&p_real, &p_fake), weights.alpha)?;
    let (l_mag, l_phase) = spectral_decomposition_loss(real, fake)?;
    let all_real: Vec<_> = t_real.into_iter().chain(p_real).collect();
    let all_fake: Vec<_> = t_fake.into_iter().chain(p_fake).collect();
    let l_fm = feature_matching_loss(&all_real, &all_fake)?;
    let components = LossComponents {
        adv: l_g + l_d,
        sd: l_mag + l_phase,
        fm: l_fm,
        ..LossComponents::default()
    };
    Ok(LossReport {
        l_g,
        l_d,
        l_mag,
        l_phase,
        l_sd: components.sd,
        l_fm,
        l_total: total_loss(&components, weights)?.total,
        weights: *weights,
    })
}
