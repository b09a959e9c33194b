//! Conformer block: half-step feed-forward, multi-head self-attention through
//! the ring executor, depthwise convolution module, second half-step
//! feed-forward, final layer norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{multi_head_attention, AttentionConfig, AttentionMode, Partition, ScoreTracker};
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::{conv1d, glu, layer_norm, linear, swish, Conv1dParams};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformerConfig {
    pub dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub depthwise_kernel: usize,
    /// Training-time dropout rate; inference ignores it unless a dropout seed is supplied.
    pub dropout: f32,
}

impl ConformerConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            num_heads: 8,
            num_layers: 2,
            depthwise_kernel: 31,
            dropout: 0.1,
        }
    }

    /// Feed-forward hidden width: half the model width.
    pub fn ffn_dim(&self) -> usize {
        self.dim / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config(format!("conformer width {} too small", self.dim)));
        }
        if self.num_heads == 0 || !self.dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "conformer width {} not divisible by {} heads",
                self.dim, self.num_heads
            )));
        }
        if self.depthwise_kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "depthwise kernel {} must be odd for same-length padding",
                self.depthwise_kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Gain and bias of a layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl Norm {
    pub fn identity(d: usize) -> Self {
        Self {
            gain: Tensor::full(&[d], 1.0),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, self.gain.data(), self.bias.data(), LAYER_NORM_EPS)
    }
}

/// Fully connected layer, weight stored `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn init(init: &mut Initializer, out: usize, inp: usize) -> Self {
        Self {
            weight: init.uniform(&[out, inp], inp),
            bias: init.uniform(&[out], inp),
        }
    }

    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out, inp]),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight, Some(&self.bias))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardWeights {
    pub norm: Norm,
    pub up: Dense,
    pub down: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub norm: Norm,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvModuleWeights {
    pub norm: Norm,
    pub pointwise_in: Dense,
    /// `[d × 1 × K]` depthwise kernel.
    pub depthwise: Tensor,
    pub depthwise_bias: Tensor,
    pub mid_norm: Norm,
    pub pointwise_out: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformerLayerWeights {
    pub ffn1: FeedForwardWeights,
    pub attention: AttentionWeights,
    pub conv: ConvModuleWeights,
    pub ffn2: FeedForwardWeights,
    pub final_norm: Norm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformerWeights {
    pub config: ConformerConfig,
    pub layers: Vec<ConformerLayerWeights>,
}

impl ConformerLayerWeights {
    fn build(
        cfg: &ConformerConfig,
        mut dense: impl FnMut(usize, usize) -> Dense,
        mut kernel: impl FnMut(usize, usize) -> (Tensor, Tensor),
    ) -> Self {
        let (d, f) = (cfg.dim, cfg.ffn_dim());
        let ffn = |dense: &mut dyn FnMut(usize, usize) -> Dense| FeedForwardWeights {
            norm: Norm::identity(d),
            up: dense(f, d),
            down: dense(d, f),
        };
        let ffn1 = ffn(&mut dense);
        let attention = AttentionWeights {
            norm: Norm::identity(d),
            query: dense(d, d),
            key: dense(d, d),
            value: dense(d, d),
            output: dense(d, d),
        };
        let pointwise_in = dense(2 * d, d);
        let (depthwise, depthwise_bias) = kernel(d, cfg.depthwise_kernel);
        let conv = ConvModuleWeights {
            norm: Norm::identity(d),
            pointwise_in,
            depthwise,
            depthwise_bias,
            mid_norm: Norm::identity(d),
            pointwise_out: dense(d, d),
        };
        let ffn2 = ffn(&mut dense);
        Self {
            ffn1,
            attention,
            conv,
            ffn2,
            final_norm: Norm::identity(d),
        }
    }
}

impl ConformerWeights {
    pub fn init(cfg: &ConformerConfig, init: &mut Initializer) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for _ in 0..cfg.num_layers {
            // Split borrows: both closures draw from the same initializer in order.
            let init_cell = std::cell::RefCell::new(&mut *init);
            let layer = ConformerLayerWeights::build(
                cfg,
                |o, i| Dense::init(&mut init_cell.borrow_mut(), o, i),
                |d, k| {
                    let mut init = init_cell.borrow_mut();
                    (init.uniform(&[d, 1, k], k), init.uniform(&[d], k))
                },
            );
            layers.push(layer);
        }
        Ok(Self { config: *cfg, layers })
    }

    /// Zero projections and convolutions with identity norms.
    pub fn zeros(cfg: &ConformerConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.num_layers)
            .map(|_| {
                ConformerLayerWeights::build(cfg, Dense::zeros, |d, k| {
                    (Tensor::zeros(&[d, 1, k]), Tensor::zeros(&[d]))
                })
            })
            .collect();
        Ok(Self { config: *cfg, layers })
    }

    /// Visits every array with a stable dotted name.
    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("{prefix}.layer{i}"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("{prefix}.layer{i}"), f);
        }
    }
}

macro_rules! named_arrays {
    ($self:ident, $p:ident, $f:ident, $($name:literal => $field:expr),* $(,)?) => {
        $( $f(format!("{}.{}", $p, $name), $field); )*
    };
}

impl ConformerLayerWeights {
    fn visit(&self, p: &str, f: &mut dyn FnMut(String, &Tensor)) {
        named_arrays!(self, p, f,
            "ffn1.norm.gain" => &self.ffn1.norm.gain, "ffn1.norm.bias" => &self.ffn1.norm.bias,
            "ffn1.up.weight" => &self.ffn1.up.weight, "ffn1.up.bias" => &self.ffn1.up.bias,
            "ffn1.down.weight" => &self.ffn1.down.weight, "ffn1.down.bias" => &self.ffn1.down.bias,
            "attn.norm.gain" => &self.attention.norm.gain, "attn.norm.bias" => &self.attention.norm.bias,
            "attn.query.weight" => &self.attention.query.weight, "attn.query.bias" => &self.attention.query.bias,
            "attn.key.weight" => &self.attention.key.weight, "attn.key.bias" => &self.attention.key.bias,
            "attn.value.weight" => &self.attention.value.weight, "attn.value.bias" => &self.attention.value.bias,
            "attn.output.weight" => &self.attention.output.weight, "attn.output.bias" => &self.attention.output.bias,
            "conv.norm.gain" => &self.conv.norm.gain, "conv.norm.bias" => &self.conv.norm.bias,
            "conv.pointwise_in.weight" => &self.conv.pointwise_in.weight, "conv.pointwise_in.bias" => &self.conv.pointwise_in.bias,
            "conv.depthwise.weight" => &self.conv.depthwise, "conv.depthwise.bias" => &self.conv.depthwise_bias,
            "conv.mid_norm.gain" => &self.conv.mid_norm.gain, "conv.mid_norm.bias" => &self.conv.mid_norm.bias,
            "conv.pointwise_out.weight" => &self.conv.pointwise_out.weight, "conv.pointwise_out.bias" => &self.conv.pointwise_out.bias,
            "ffn2.norm.gain" => &self.ffn2.norm.gain, "ffn2.norm.bias" => &self.ffn2.norm.bias,
            "ffn2.up.weight" => &self.ffn2.up.weight, "ffn2.up.bias" => &self.ffn2.up.bias,
            "ffn2.down.weight" => &self.ffn2.down.weight, "ffn2.down.bias" => &self.ffn2.down.bias,
            "final_norm.gain" => &self.final_norm.gain, "final_norm.bias" => &self.final_norm.bias,
        );
    }

    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        named_arrays!(self, p, f,
            "ffn1.norm.gain" => &mut self.ffn1.norm.gain, "ffn1.norm.bias" => &mut self.ffn1.norm.bias,
            "ffn1.up.weight" => &mut self.ffn1.up.weight, "ffn1.up.bias" => &mut self.ffn1.up.bias,
            "ffn1.down.weight" => &mut self.ffn1.down.weight, "ffn1.down.bias" => &mut self.ffn1.down.bias,
            "attn.norm.gain" => &mut self.attention.norm.gain, "attn.norm.bias" => &mut self.attention.norm.bias,
            "attn.query.weight" => &mut self.attention.query.weight, "attn.query.bias" => &mut self.attention.query.bias,
            "attn.key.weight" => &mut self.attention.key.weight, "attn.key.bias" => &mut self.attention.key.bias,
            "attn.value.weight" => &mut self.attention.value.weight, "attn.value.bias" => &mut self.attention.value.bias,
            "attn.output.weight" => &mut self.attention.output.weight, "attn.output.bias" => &mut self.attention.output.bias,
            "conv.norm.gain" => &mut self.conv.norm.gain, "conv.norm.bias" => &mut self.conv.norm.bias,
            "conv.pointwise_in.weight" => &mut self.conv.pointwise_in.weight, "conv.pointwise_in.bias" => &mut self.conv.pointwise_in.bias,
            "conv.depthwise.weight" => &mut self.conv.depthwise, "conv.depthwise.bias" => &mut self.conv.depthwise_bias,
            "conv.mid_norm.gain" => &mut self.conv.mid_norm.gain, "conv.mid_norm.bias" => &mut self.conv.mid_norm.bias,
            "conv.pointwise_out.weight" => &mut self.conv.pointwise_out.weight, "conv.pointwise_out.bias" => &mut self.conv.pointwise_out.bias,
            "ffn2.norm.gain" => &mut self.ffn2.norm.gain, "ffn2.norm.bias" => &mut self.ffn2.norm.bias,
            "ffn2.up.weight" => &mut self.ffn2.up.weight, "ffn2.up.bias" => &mut self.ffn2.up.bias,
            "ffn2.down.weight" => &mut self.ffn2.down.weight, "ffn2.down.bias" => &mut self.ffn2.down.bias,
            "final_norm.gain" => &mut self.final_norm.gain, "final_norm.bias" => &mut self.final_norm.bias,
        );
    }
}

/// Runtime settings for a forward pass.
#[derive(Clone, Copy)]
pub struct BlockContext<'a> {
    pub partition: Partition,
    pub mode: AttentionMode,
    pub tracker: &'a ScoreTracker,
    /// Enables seeded dropout masks (training-style forward). `None` at inference.
    pub dropout_seed: Option<u64>,
}

impl<'a> BlockContext<'a> {
    pub fn inference(partition: Partition, tracker: &'a ScoreTracker) -> Self {
        Self {
            partition,
            mode: AttentionMode::Ring,
            tracker,
            dropout_seed: None,
        }
    }
}

fn check_width(x: &Tensor, d: usize, op: &'static str) -> Result<usize> {
    let (t, w) = x.dims2()?;
    if w != d {
        return Err(Error::dim(op, x.shape(), &[t, d]));
    }
    Ok(t)
}

/// `layer_norm → d→d/2 → swish → d/2→d`. The caller adds the half-step residual.
pub fn feed_forward_module(x: &Tensor, w: &FeedForwardWeights) -> Result<Tensor> {
    check_width(x, w.norm.gain.len(), "feed_forward_module")?;
    let h = w.up.apply(&w.norm.apply(x)?)?;
    w.down.apply(&swish(&h))
}

/// `layer_norm → Q/K/V projections → attention per head → output projection`.
pub fn mhsa_module(x: &Tensor, w: &AttentionWeights, num_heads: usize, ctx: &BlockContext<'_>) -> Result<Tensor> {
    let d = w.norm.gain.len();
    let t = check_width(x, d, "mhsa_module")?;
    let cfg = AttentionConfig::for_layer(t, d, num_heads, ctx.partition)?;
    let h = w.norm.apply(x)?;
    let (q, k, v) = (w.query.apply(&h)?, w.key.apply(&h)?, w.value.apply(&h)?);
    let attended = multi_head_attention(&q, &k, &v, &cfg, ctx.mode, ctx.tracker)?;
    w.output.apply(&attended)
}

/// `layer_norm → pointwise d→2d → GLU → depthwise conv → layer_norm → swish → pointwise d→d`.
pub fn conv_module(x: &Tensor, w: &ConvModuleWeights) -> Result<Tensor> {
    let d = w.norm.gain.len();
    check_width(x, d, "conv_module")?;
    let kernel = w.depthwise.shape()[2];
    let gated = glu(&w.pointwise_in.apply(&w.norm.apply(x)?)?)?;
    let params = Conv1dParams {
        padding: kernel / 2,
        groups: d,
        ..Conv1dParams::default()
    };
    let mixed = conv1d(&gated.transpose()?, &w.depthwise, Some(&w.depthwise_bias), params)?.transpose()?;
    w.pointwise_out.apply(&swish(&w.mid_norm.apply(&mixed)?))
}

fn dropout(x: Tensor, rate: f32, rng: Option<&mut ChaCha8Rng>) -> Tensor {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mut x = x;
            for v in x.data_mut() {
                *v = if rng.random::<f32>() < rate { 0.0 } else { *v * keep };
            }
            x
        }
        _ => x,
    }
}

/// One Conformer layer (macaron ordering).
pub fn conformer_block(
    x: &Tensor,
    w: &ConformerLayerWeights,
    cfg: &ConformerConfig,
    ctx: &BlockContext<'_>,
) -> Result<Tensor> {
    let mut rng = ctx.dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let rate = cfg.dropout;
    let y = x.add_scaled(&dropout(feed_forward_module(x, &w.ffn1)?, rate, rng.as_mut()), 0.5)?;
    let y = y.add(&dropout(
        mhsa_module(&y, &w.attention, cfg.num_heads, ctx)?,
        rate,
        rng.as_mut(),
    ))?;
    let y = y.add(&dropout(conv_module(&y, &w.conv)?, rate, rng.as_mut()))?;
    let y = y.add_scaled(&dropout(feed_forward_module(&y, &w.ffn2)?, rate, rng.as_mut()), 0.5)?;
    w.final_norm.apply(&y)?.ensure_finite("conformer block")
}

/// All layers of a Conformer stack on a `T×d` sequence.
pub fn conformer_stack(x: &Tensor, w: &ConformerWeights, ctx: &BlockContext<'_>) -> Result<Tensor> {
    let mut y = x.clone();
    for layer in &w.layers {
        y = conformer_block(&y, layer, &w.config, ctx)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::vanilla_attention;
    use crate::ops::matmul;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut init = Initializer::new(seed);
        init.uniform(shape, 1)
    }

    fn small_cfg(dim: usize, heads: usize) -> ConformerConfig {
        ConformerConfig {
            num_heads: heads,
            ..ConformerConfig::new(dim)
        }
    }

    #[test]
    fn config_guards() {
        assert!(small_cfg(30, 8).validate().is_err());
        let even = ConformerConfig {
            depthwise_kernel: 30,
            ..ConformerConfig::new(64)
        };
        assert!(even.validate().is_err());
        assert_eq!(ConformerConfig::new(256).ffn_dim(), 128);
    }

    #[test]
    fn feed_forward_matches_matmul_chain() {
        let cfg = small_cfg(8, 2);
        let w = ConformerWeights::init(&cfg, &mut Initializer::new(1)).unwrap();
        let ffn = &w.layers[0].ffn1;
        let x = random(&[4, 8], 2);
        let got = feed_forward_module(&x, ffn).unwrap();

        // Independent chain in f64: manual normalization, explicit matmuls.
        let xd = x.cast::<f64>();
        let mut normed = Vec::new();
        for r in 0..4 {
            let row = xd.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            normed.extend(row.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()));
        }
        let normed = Tensor::new(&[4, 8], normed).unwrap();
        let add_bias = |t: Tensor<f64>, b: &Tensor| {
            let (r, c) = t.dims2().unwrap();
            Tensor::from_fn(&[r, c], |i| t.data()[i] + b.data()[i % c] as f64)
        };
        let h = add_bias(
            matmul(&normed, &ffn.up.weight.cast::<f64>().transpose().unwrap()).unwrap(),
            &ffn.up.bias,
        );
        let h = h.map(|v| v / (1.0 + (-v).exp()));
        let out = add_bias(
            matmul(&h, &ffn.down.weight.cast::<f64>().transpose().unwrap()).unwrap(),
            &ffn.down.bias,
        );
        assert!(got.cast::<f64>().max_abs_diff(&out).unwrap() < 1e-6);
    }

    #[test]
    fn zero_weights_give_zero_modules_and_normed_block() {
        let cfg = small_cfg(16, 4);
        let w = ConformerWeights::zeros(&cfg).unwrap();
        let x = random(&[10, 16], 3);
        let tracker = ScoreTracker::new();
        let ctx = BlockContext::inference(Partition::BlockLen(4), &tracker);
        let l = &w.layers[0];
        assert!(feed_forward_module(&x, &l.ffn1)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(mhsa_module(&x, &l.attention, 4, &ctx)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(conv_module(&x, &l.conv).unwrap().data().iter().all(|&v| v == 0.0));
        let out = conformer_block(&x, l, &cfg, &ctx).unwrap();
        assert_eq!(out, Norm::identity(16).apply(&x).unwrap());
    }

    #[test]
    fn shapes_preserved_for_short_sequences() {
        let cfg = small_cfg(16, 4);
        let w = ConformerWeights::init(&cfg, &mut Initializer::new(5)).unwrap();
        let tracker = ScoreTracker::new();
        let ctx = BlockContext::inference(Partition::BlockLen(8), &tracker);
        for t in [1, 5, 30, 31, 45] {
            let x = random(&[t, 16], t as u64);
            assert_eq!(conv_module(&x, &w.layers[0].conv).unwrap().shape(), &[t, 16]);
            assert_eq!(conformer_block(&x, &w.layers[0], &cfg, &ctx).unwrap().shape(), &[t, 16]);
        }
    }

    #[test]
    fn single_head_single_device_mhsa_is_vanilla_chain() {
        let cfg = small_cfg(8, 1);
        let w = ConformerWeights::init(&cfg, &mut Initializer::new(9)).unwrap();
        let a = &w.layers[0].attention;
        let x = random(&[12, 8], 4);
        let tracker = ScoreTracker::new();
        let ctx = BlockContext::inference(Partition::BlockLen(512), &tracker);
        let got = mhsa_module(&x, a, 1, &ctx).unwrap();
        let h = a.norm.apply(&x).unwrap();
        let att = vanilla_attention(
            &a.query.apply(&h).unwrap(),
            &a.key.apply(&h).unwrap(),
            &a.value.apply(&h).unwrap(),
        )
        .unwrap();
        let expect = a.output.apply(&att).unwrap();
        assert!(got.max_abs_diff(&expect).unwrap() < 1e-6);
    }

    #[test]
    fn ring_and_vanilla_agree_inside_module_and_stack() {
        let cfg = small_cfg(32, 8);
        let w = ConformerWeights::init(&cfg, &mut Initializer::new(11)).unwrap();
        let x = random(&[64, 32], 6);
        let tracker = ScoreTracker::new();
        let ring = BlockContext::inference(Partition::Devices(4), &tracker);
        let vanilla = BlockContext {
            mode: AttentionMode::Vanilla,
            ..ring
        };
        let single = BlockContext::inference(Partition::Devices(1), &tracker);
        let a = mhsa_module(&x, &w.layers[0].attention, 8, &ring).unwrap();
        let b = mhsa_module(&x, &w.layers[0].attention, 8, &vanilla).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-4);
        let s4 = conformer_stack(&x, &w, &ring).unwrap();
        let s1 = conformer_stack(&x, &w, &single).unwrap();
        assert!(s4.max_abs_diff(&s1).unwrap() < 1e-4);
    }

    #[test]
    fn dropout_hook_is_seeded() {
        let cfg = small_cfg(16, 4);
        let w = ConformerWeights::init(&cfg, &mut Initializer::new(2)).unwrap();
        let x = random(&[8, 16], 1);
        let tracker = ScoreTracker::new();
        let plain = BlockContext::inference(Partition::BlockLen(8), &tracker);
        let dropped = BlockContext {
            dropout_seed: Some(3),
            ..plain
        };
        let base = conformer_block(&x, &w.layers[0], &cfg, &plain).unwrap();
        let d1 = conformer_block(&x, &w.layers[0], &cfg, &dropped).unwrap();
        let d2 = conformer_block(&x, &w.layers[0], &cfg, &dropped).unwrap();
        assert_eq!(d1, d2);
        assert_ne!(d1, base);
    }

    #[test]
    fn glu_zero_gate() {
        let x = Tensor::new(&[1, 2], vec![3.0, 0.0]).unwrap();
        assert_eq!(glu(&x).unwrap().data(), &[1.5]);
    }
}
