use std::sync::atomic::{AtomicUsize, Ordering};

use super::{AttentionConfig, AttentionMode};
use crate::tensor::Scalar;

/// Counts live attention-score elements across all threads and remembers the peak.
#[derive(Debug, Default)]
pub struct ScoreTracker {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl ScoreTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn live(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn reset_peak(&self) {
        self.peak.store(self.live(), Ordering::SeqCst);
    }

    fn acquire(&self, n: usize) {
        let now = self.live.fetch_add(n, Ordering::SeqCst) + n;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn release(&self, n: usize) {
        self.live.fetch_sub(n, Ordering::SeqCst);
    }
}

/// A score matrix whose lifetime is recorded in a [`ScoreTracker`].
pub struct ScoreBuffer<'a, T> {
    data: Vec<T>,
    tracker: &'a ScoreTracker,
}

impl<'a, T: Scalar> ScoreBuffer<'a, T> {
    pub fn new(len: usize, tracker: &'a ScoreTracker) -> Self {
        tracker.acquire(len);
        Self {
            data: vec![T::zero(); len],
            tracker,
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl<T> Drop for ScoreBuffer<'_, T> {
    fn drop(&mut self) {
        self.tracker.release(self.data.len());
    }
}

/// Peak number of score elements held at once: every ring device keeps one
/// `b×b` buffer (`N_d·b²` in total), vanilla attention one `T×T` matrix.
pub fn peak_score_elements(cfg: &AttentionConfig, mode: AttentionMode) -> usize {
    match mode {
        AttentionMode::Ring => cfg.num_devices() * cfg.block_len * cfg.block_len,
        AttentionMode::Vanilla => cfg.seq_len * cfg.seq_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_values() {
        let cfg = AttentionConfig::new(4096, 512, 8, 64);
        let ring = peak_score_elements(&cfg, AttentionMode::Ring);
        let vanilla = peak_score_elements(&cfg, AttentionMode::Vanilla);
        assert_eq!(ring, 2_097_152);
        assert_eq!(vanilla, 16_777_216);
        assert_eq!(ring as f64 / vanilla as f64, 0.125);
        let same = AttentionConfig::new(512, 512, 1, 8);
        assert_eq!(
            peak_score_elements(&same, AttentionMode::Ring),
            peak_score_elements(&same, AttentionMode::Vanilla)
        );
    }

    #[test]
    fn tracker_counts_overlap() {
        let t = ScoreTracker::new();
        {
            let _a = ScoreBuffer::<f32>::new(10, &t);
            let _b = ScoreBuffer::<f32>::new(5, &t);
            assert_eq!(t.live(), 15);
        }
        let _c = ScoreBuffer::<f32>::new(7, &t);
        assert_eq!(t.live(), 7);
        assert_eq!(t.peak(), 15);
    }
}
