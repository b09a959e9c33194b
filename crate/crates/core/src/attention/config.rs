use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a sequence is divided among ring devices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Fixed block length `b`; the device count follows from the sequence length.
    BlockLen(usize),
    /// Fixed device count; the block length is `ceil(T/N_d)`.
    Devices(usize),
}

impl Default for Partition {
    fn default() -> Self {
        Partition::BlockLen(512)
    }
}

impl Partition {
    /// Block length for a sequence of `seq_len` tokens. A block never exceeds
    /// the sequence, so short sequences collapse to a single device.
    pub fn block_len(self, seq_len: usize) -> Result<usize> {
        match self {
            Partition::BlockLen(0) | Partition::Devices(0) => Err(Error::config("ring partition must be positive")),
            Partition::BlockLen(b) => Ok(b.min(seq_len.max(1))),
            Partition::Devices(n) => Ok(seq_len.div_ceil(n).max(1)),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Ring,
    Vanilla,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub seq_len: usize,
    pub block_len: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    /// Stop after this many rotations instead of visiting every block.
    /// Local-window experiments only; the result is no longer global attention.
    pub window: Option<usize>,
}

impl AttentionConfig {
    pub fn new(seq_len: usize, block_len: usize, num_heads: usize, head_dim: usize) -> Self {
        Self {
            seq_len,
            block_len,
            num_heads,
            head_dim,
            window: None,
        }
    }

    /// Configuration for a layer of width `width` split into `num_heads` heads.
    pub fn for_layer(seq_len: usize, width: usize, num_heads: usize, partition: Partition) -> Result<Self> {
        if num_heads == 0 || !width.is_multiple_of(num_heads) {
            return Err(Error::config(format!(
                "channel width {width} is not divisible by {num_heads} heads"
            )));
        }
        let cfg = Self::new(seq_len, partition.block_len(seq_len)?, num_heads, width / num_heads);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_devices(&self) -> usize {
        self.seq_len.div_ceil(self.block_len)
    }

    pub fn model_width(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// Rotations each device performs.
    pub fn rotations(&self) -> usize {
        let n = self.num_devices();
        self.window.map_or(n, |w| w.clamp(1, n))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.block_len == 0 || self.num_heads == 0 || self.head_dim == 0 {
            return Err(Error::config(format!("attention extents must be positive: {self:?}")));
        }
        if self.window == Some(0) {
            return Err(Error::config("restricted ring window must be at least one rotation"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn device_count_covers_sequence() {
        for (t, b, n) in [(2048, 512, 4), (2049, 512, 5), (64, 512, 1), (1, 1, 1), (100, 7, 15)] {
            let cfg = AttentionConfig::new(t, b, 1, 4);
            assert_eq!(cfg.num_devices(), n);
            assert!(cfg.num_devices() * b >= t);
        }
    }

    #[test]
    fn partitions_resolve() {
        assert_eq!(Partition::BlockLen(512).block_len(128).unwrap(), 128);
        assert_eq!(Partition::BlockLen(32).block_len(128).unwrap(), 32);
        assert_eq!(Partition::Devices(4).block_len(128).unwrap(), 32);
        assert_eq!(Partition::Devices(4).block_len(130).unwrap(), 33);
        assert_eq!(Partition::Devices(4).block_len(2).unwrap(), 1);
        assert!(Partition::Devices(0).block_len(8).is_err());
    }

    #[test]
    fn heads_must_divide_width() {
        assert!(AttentionConfig::for_layer(16, 30, 8, Partition::default()).is_err());
        let cfg = AttentionConfig::for_layer(16, 256, 8, Partition::default()).unwrap();
        assert_eq!(cfg.head_dim, 32);
    }
}
