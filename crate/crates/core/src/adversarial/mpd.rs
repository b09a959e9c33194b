//! Forward-only multi-period discriminator.

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::{conv1d, leaky_relu, Conv1dParams};
use crate::parallel;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpdConfig {
    pub periods: Vec<usize>,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub post_kernel: usize,
    pub slope: f32,
}

impl Default for MpdConfig {
    fn default() -> Self {
        Self {
            periods: vec![2, 3, 5, 7, 9],
            channels: vec![32, 128, 512, 1024, 1024],
            kernel: 5,
            stride: 3,
            post_kernel: 3,
            slope: 0.1,
        }
    }
}

impl MpdConfig {
    /// Height stride of conv layer `i`: the last layer keeps the resolution.
    pub fn layer_stride(&self, i: usize) -> usize {
        if i + 1 == self.channels.len() {
            1
        } else {
            self.stride
        }
    }
}

/// Scores and per-layer activations of one sub-discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutput {
    pub score_map: Tensor,
    /// `[period × channels × height]` activations, in layer order.
    pub features: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `[C_out × C_in × K]`, applied along the height axis of each column.
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodDiscriminator {
    pub period: usize,
    pub layers: Vec<ConvLayer>,
    pub post: ConvLayer,
    pub slope: f32,
}

impl PeriodDiscriminator {
    pub fn new(period: usize, cfg: &MpdConfig, init: &mut Initializer) -> Result<Self> {
        if period == 0 {
            return Err(Error::Argument("discriminator period must be at least 1".into()));
        }
        let mut c_in = 1;
        let mut layers = Vec::with_capacity(cfg.channels.len());
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            let fan = c_in * cfg.kernel;
            layers.push(ConvLayer {
                weight: init.uniform(&[c_out, c_in, cfg.kernel], fan),
                bias: init.uniform(&[c_out], fan),
                stride: cfg.layer_stride(i),
            });
            c_in = c_out;
        }
        let fan = c_in * cfg.post_kernel;
        let post = ConvLayer {
            weight: init.uniform(&[1, c_in, cfg.post_kernel], fan),
            bias: init.uniform(&[1], fan),
            stride: 1,
        };
        Ok(Self {
            period,
            layers,
            post,
            slope: cfg.slope,
        })
    }
}

/// Every period's sub-discriminator, seeded from one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Mpd {
    pub config: MpdConfig,
    pub discriminators: Vec<PeriodDiscriminator>,
}

impl Mpd {
    pub fn new(cfg: &MpdConfig, seed: u64) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.kernel.is_multiple_of(2) || cfg.post_kernel.is_multiple_of(2) {
            return Err(Error::config("discriminator needs at least one layer and odd kernels"));
        }
        let mut init = Initializer::new(seed);
        let discriminators = cfg
            .periods
            .iter()
            .map(|&p| PeriodDiscriminator::new(p, cfg, &mut init))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: cfg.clone(),
            discriminators,
        })
    }

    pub fn forward(&self, x: &Waveform) -> Result<Vec<DiscriminatorOutput>> {
        self.discriminators
            .iter()
            .map(|d| mpd_forward(x, d.period, d))
            .collect()
    }
}

/// Zero-pads to a multiple of `period` and folds into `period` columns of
/// height `ceil(len/period)`: column `c` holds samples `c, c+p, c+2p, …`.
pub fn fold_periods(x: &[f32], period: usize) -> Result<Vec<Tensor>> {
    if period == 0 {
        return Err(Error::Argument("period must be at least 1".into()));
    }
    if x.is_empty() {
        return Err(Error::Argument("cannot fold an empty signal".into()));
    }
    let height = x.len().div_ceil(period);
    Ok((0..period)
        .map(|c| Tensor::from_fn(&[1, height], |h| x.get(h * period + c).copied().unwrap_or(0.0)))
        .collect())
}

fn stack_columns(cols: &[Tensor]) -> Result<Tensor> {
    let (c, h) = cols[0].dims2()?;
    let data = cols.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(&[cols.len(), c, h], data)
}

/// Height after a `K×1` convolution with padding `K/2`.
pub fn conv_height(h: usize, kernel: usize, stride: usize) -> usize {
    (h + 2 * (kernel / 2) - kernel) / stride + 1
}

pub fn mpd_forward(x: &Waveform, period: usize, w: &PeriodDiscriminator) -> Result<DiscriminatorOutput> {
    if period != w.period {
        return Err(Error::Argument(format!(
            "period {period} does not match discriminator built for {}",
            w.period
        )));
    }
    let mut cols = fold_periods(x.samples(), period)?;
    let mut features = Vec::with_capacity(w.layers.len() + 1);
    for layer in &w.layers {
        let k = layer.weight.shape()[2];
        let params = Conv1dParams {
            stride: layer.stride,
            padding: k / 2,
            ..Conv1dParams::default()
        };
        cols = parallel::map_range(cols.len(), |c| {
            conv1d(&cols[c], &layer.weight, Some(&layer.bias), params).map(|y| leaky_relu(&y, w.slope))
        })
        .into_iter()
        .collect::<Result<_>>()?;
        features.push(stack_columns(&cols)?);
    }
    let k = w.post.weight.shape()[2];
    let scores = cols
        .iter()
        .map(|col| conv1d(col, &w.post.weight, Some(&w.post.bias), Conv1dParams::padded(k / 2)))
        .collect::<Result<Vec<_>>>()?;
    let score_map = stack_columns(&scores)?;
    features.push(score_map.clone());
    Ok(DiscriminatorOutput { score_map, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> MpdConfig {
        MpdConfig {
            channels: vec![4, 8, 8, 16, 16],
            ..MpdConfig::default()
        }
    }

    #[test]
    fn fold_pads_with_zeros() {
        let x: Vec<f32> = (1..=7).map(|v| v as f32).collect();
        let cols = fold_periods(&x, 2).unwrap();
        assert_eq!(cols.len(), 2);
        assert_eq!(cols[0].data(), &[1.0, 3.0, 5.0, 7.0]);
        assert_eq!(cols[1].data(), &[2.0, 4.0, 6.0, 0.0]);
    }

    #[test]
    fn zero_period_rejected() {
        assert!(fold_periods(&[1.0], 0).is_err());
        let mut init = Initializer::new(0);
        assert!(PeriodDiscriminator::new(0, &small(), &mut init).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let x = Waveform::new((0..300).map(|i| (i as f32 * 0.1).sin()).collect(), 22050).unwrap();
        let a = Mpd::new(&small(), 3).unwrap().forward(&x).unwrap();
        let b = Mpd::new(&small(), 3).unwrap().forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn default_widths() {
        let cfg = MpdConfig::default();
        let d = PeriodDiscriminator::new(2, &cfg, &mut Initializer::new(0)).unwrap();
        let shapes: Vec<_> = d.layers.iter().map(|l| l.weight.shape().to_vec()).collect();
        assert_eq!(shapes[0], vec![32, 1, 5]);
        assert_eq!(shapes[4], vec![1024, 1024, 5]);
        assert_eq!(d.post.weight.shape(), &[1, 1024, 3]);
        assert_eq!(
            d.layers.iter().map(|l| l.stride).collect::<Vec<_>>(),
            vec![3, 3, 3, 3, 1]
        );
    }

    #[test]
    fn column_conv_matches_direct_2d_sum() {
        // Direct K×1 2-D convolution over the folded image for the first layer.
        let cfg = small();
        let d = PeriodDiscriminator::new(3, &cfg, &mut Initializer::new(4)).unwrap();
        let samples: Vec<f32> = (0..50).map(|i| ((i * 7 % 11) as f32 - 5.0) / 5.0).collect();
        let x = Waveform::new(samples.clone(), 22050).unwrap();
        let out = mpd_forward(&x, 3, &d).unwrap();
        let (p, hgt) = (3, 50usize.div_ceil(3));
        let img = |h: isize, c: usize| -> f32 {
            if h < 0 || h as usize >= hgt {
                0.0
            } else {
                samples.get(h as usize * p + c).copied().unwrap_or(0.0)
            }
        };
        let l = &d.layers[0];
        let f = &out.features[0];
        let h_out = conv_height(hgt, 5, 3);
        assert_eq!(f.shape(), &[3, 4, h_out]);
        for c in 0..p {
            for o in 0..4 {
                for h in 0..h_out {
                    let mut acc = l.bias.data()[o];
                    for k in 0..5 {
                        acc += l.weight.data()[o * 5 + k] * img((h * 3 + k) as isize - 2, c);
                    }
                    let expect = if acc >= 0.0 { acc } else { 0.1 * acc };
                    let got = f.data()[(c * 4 + o) * h_out + h];
                    assert!((got - expect).abs() < 1e-5);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn feature_heights_follow_conv_law(len in 1usize..400, pi in 0usize..5) {
            let cfg = small();
            let period = cfg.periods[pi];
            let d = PeriodDiscriminator::new(period, &cfg, &mut Initializer::new(1)).unwrap();
            let x = Waveform::new(vec![0.25; len], 22050).unwrap();
            let out = mpd_forward(&x, period, &d).unwrap();
            let mut h = len.div_ceil(period);
            for (i, f) in out.features[..5].iter().enumerate() {
                let stride = if i == 4 { 1 } else { 3 };
                h = (h + 2 * 2 - 5) / stride + 1;
                prop_assert_eq!(f.shape(), &[period, cfg.channels[i], h][..]);
            }
            prop_assert_eq!(out.score_map.shape(), &[period, 1, h][..]);
        }
    }
}
