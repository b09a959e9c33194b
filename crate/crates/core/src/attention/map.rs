use std::fmt::Write as _;
use std::path::Path;

use super::{dot, AttentionConfig};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Largest sequence accepted by [`export_attention_map`].
pub const MAX_MAP_LEN: usize = 4096;

/// Row-normalized `T×T` attention probabilities for one head (`q`, `k` are
/// `T×d_k`), accumulated block by block in ring order. Under a restricted
/// window, blocks a device never sees get zero weight.
pub fn attention_map<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, cfg: &AttentionConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    let (t, d) = q.dims2()?;
    if k.shape() != q.shape() || t != cfg.seq_len {
        return Err(Error::dim("attention_map", q.shape(), k.shape()));
    }
    let scale = T::one() / T::of(d as f64).sqrt();
    let (b, n) = (cfg.block_len, cfg.num_devices());
    let visible = |i: usize| -> Vec<usize> { (0..cfg.rotations()).map(|s| (i + n - s) % n).collect() };
    let rows_of = |blk: usize| blk * b..((blk + 1) * b).min(t);
    let mut map = vec![T::zero(); t * t];

    for dev in 0..n {
        let blocks = visible(dev);
        for r in rows_of(dev) {
            let qrow = q.row(r);
            let score = |j: usize| dot(qrow, k.row(j)) * scale;
            // Online max/normalizer over the visible blocks, then one normalization pass.
            let (mut max, mut den) = (T::neg_infinity(), T::zero());
            for &blk in &blocks {
                for j in rows_of(blk) {
                    let s = score(j);
                    if s > max {
                        den = den * (max - s).exp() + T::one();
                        max = s;
                    } else {
                        den = den + (s - max).exp();
                    }
                }
            }
            for &blk in &blocks {
                for j in rows_of(blk) {
                    map[r * t + j] = (score(j) - max).exp() / den;
                }
            }
        }
    }
    Tensor::new(&[t, t], map)?.ensure_finite("attention map")
}

/// Writes [`attention_map`] as headerless CSV, one query row per line.
pub fn export_attention_map<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    cfg: &AttentionConfig,
    path: impl AsRef<Path>,
) -> Result<Tensor<T>> {
    if cfg.seq_len > MAX_MAP_LEN {
        return Err(Error::Argument(format!(
            "attention map export limited to {MAX_MAP_LEN} tokens, got {}",
            cfg.seq_len
        )));
    }
    let map = attention_map(q, k, cfg)?;
    let t = cfg.seq_len;
    let mut text = String::with_capacity(t * t * 12);
    for r in 0..t {
        for (j, v) in map.row(r).iter().enumerate() {
            if j > 0 {
                text.push(',');
            }
            write!(text, "{v}").expect("write to String");
        }
        text.push('\n');
    }
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(map)
}
