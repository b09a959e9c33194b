//! Exact blockwise ring attention over simulated devices.
//!
//! The sequence is split into `N_d = ceil(T/b)` blocks, one per device.
//! Every device keeps its query block and an online-softmax accumulator
//! ([`RingState`]) while key/value blocks travel around the ring, so after
//! `N_d` rotations each device holds the exact global attention output for
//! its queries. [`vanilla_attention`] materializes the full `T×T` score
//! matrix and serves as the exactness oracle.

mod config;
mod map;
mod memory;
mod ring;
mod vanilla;

pub use config::{AttentionConfig, AttentionMode, Partition};
pub use map::{attention_map, export_attention_map, MAX_MAP_LEN};
pub use memory::{peak_score_elements, ScoreBuffer, ScoreTracker};
#[doc(hidden)]
pub use ring::ring_attention_with_fault;
pub use ring::{
    blockwise_partial_update, multi_head_attention, ring_attention, ring_attention_traced, split_blocks, DeviceBlock,
    RingState,
};
pub use vanilla::{vanilla_attention, vanilla_attention_traced};

use crate::tensor::Scalar;

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four independent partial sums break the add dependency chain.
    let mut acc = [T::zero(); 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail = ac
        .remainder()
        .iter()
        .zip(bc.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
