use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Barrier;
use std::thread;

use super::memory::{ScoreBuffer, ScoreTracker};
use super::vanilla::vanilla_attention_traced;
use super::{dot, AttentionConfig, AttentionMode};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Scalar, Tensor};

/// Online-softmax accumulator for one device's query block and one head.
///
/// Each query row keeps a running maximum `m`, a numerator `Σ exp(s−m)·v`
/// and a denominator `Σ exp(s−m)`; folding in another key block rescales
/// both by `exp(m_old − m_new)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RingState<T = f32> {
    rows: usize,
    head_dim: usize,
    // Per row: numerator (head_dim values), running max, denominator.
    acc: Vec<T>,
    rotation_step: usize,
    num_devices: usize,
}

impl<T: Scalar> RingState<T> {
    pub fn new(rows: usize, head_dim: usize, num_devices: usize) -> Self {
        let stride = head_dim + 2;
        let mut acc = vec![T::zero(); rows * stride];
        for r in 0..rows {
            acc[r * stride + head_dim] = T::neg_infinity();
        }
        Self {
            rows,
            head_dim,
            acc,
            rotation_step: 0,
            num_devices,
        }
    }

    pub fn rotation_step(&self) -> usize {
        self.rotation_step
    }

    pub fn running_max(&self) -> Vec<T> {
        self.column(self.head_dim)
    }

    pub fn denominator(&self) -> Vec<T> {
        self.column(self.head_dim + 1)
    }

    pub fn numerator(&self) -> Tensor<T> {
        let stride = self.head_dim + 2;
        let data = (0..self.rows)
            .flat_map(|r| self.acc[r * stride..r * stride + self.head_dim].iter().copied())
            .collect();
        Tensor::new(&[self.rows, self.head_dim], data).expect("numerator shape")
    }

    fn column(&self, c: usize) -> Vec<T> {
        self.acc.iter().skip(c).step_by(self.head_dim + 2).copied().collect()
    }

    /// Folds the key/value block `(k, v)` into the state. `mask[j]` is false for
    /// zero-padded key rows, which receive a score of −∞. `scores` must hold at
    /// least `rows × k_rows` elements.
    pub fn absorb(
        &mut self,
        q: &Tensor<T>,
        k: &Tensor<T>,
        v: &Tensor<T>,
        mask: &[bool],
        scores: &mut [T],
    ) -> Result<()> {
        if self.rotation_step >= self.num_devices {
            return Err(Error::Protocol(format!(
                "update after all {} rotations have been absorbed",
                self.num_devices
            )));
        }
        let (q_rows, d) = q.dims2()?;
        let (k_rows, dk) = k.dims2()?;
        if q_rows != self.rows || d != self.head_dim || dk != d {
            return Err(Error::dim("ring update (q, k)", q.shape(), k.shape()));
        }
        if v.shape() != k.shape() || mask.len() != k_rows {
            return Err(Error::dim("ring update (k, v)", k.shape(), v.shape()));
        }
        if scores.len() < q_rows * k_rows {
            return Err(Error::Argument(format!(
                "score buffer of {} elements cannot hold a {q_rows}x{k_rows} block",
                scores.len()
            )));
        }
        let scale = T::one() / T::of(d as f64).sqrt();
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        let scores = &mut scores[..q_rows * k_rows];
        parallel::for_each_chunk_pair(&mut self.acc, d + 2, scores, k_rows, |r, state, srow| {
            let qrow = &qd[r * d..(r + 1) * d];
            let mut block_max = T::neg_infinity();
            for ((s, krow), &keep) in srow.iter_mut().zip(kd.chunks_exact(d)).zip(mask) {
                *s = if keep {
                    let v = dot(qrow, krow) * scale;
                    block_max = block_max.max(v);
                    v
                } else {
                    T::neg_infinity()
                };
            }
            let old_max = state[d];
            let new_max = old_max.max(block_max);
            if new_max == T::neg_infinity() {
                return;
            }
            let rescale = if old_max == T::neg_infinity() {
                T::zero()
            } else {
                (old_max - new_max).exp()
            };
            let (num, rest) = state.split_at_mut(d);
            for n in num.iter_mut() {
                *n = *n * rescale;
            }
            let mut den = rest[1] * rescale;
            for ((&s, vrow), &keep) in srow.iter().zip(vd.chunks_exact(d)).zip(mask) {
                if !keep {
                    continue;
                }
                let p = (s - new_max).exp();
                den = den + p;
                for (n, &vv) in num.iter_mut().zip(vrow) {
                    *n = *n + p * vv;
                }
            }
            rest[0] = new_max;
            rest[1] = den;
        });
        self.rotation_step += 1;
        Ok(())
    }

    /// `numerator / denominator` for every query row.
    pub fn finalize(&self) -> Result<Tensor<T>> {
        let stride = self.head_dim + 2;
        let mut out = Vec::with_capacity(self.rows * self.head_dim);
        for r in 0..self.rows {
            let row = &self.acc[r * stride..(r + 1) * stride];
            let den = row[self.head_dim + 1];
            if !(den > T::zero()) {
                return Err(Error::Protocol(format!(
                    "query row {r} has not seen any unmasked key after {} rotations",
                    self.rotation_step
                )));
            }
            out.extend(row[..self.head_dim].iter().map(|&n| n / den));
        }
        Tensor::new(&[self.rows, self.head_dim], out)?.ensure_finite("ring finalize")
    }
}

/// Functional form of [`RingState::absorb`] for a single head.
pub fn blockwise_partial_update<T: Scalar>(
    mut state: RingState<T>,
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: &[bool],
) -> Result<RingState<T>> {
    let tracker = ScoreTracker::new();
    let mut buf = ScoreBuffer::<T>::new(state.rows * mask.len(), &tracker);
    state.absorb(q, k, v, mask, buf.as_mut_slice())?;
    Ok(state)
}

/// One device's share of the sequence, split per head.
#[derive(Clone, Debug)]
pub struct DeviceBlock<T = f32> {
    pub index: usize,
    pub q: Vec<Tensor<T>>,
    pub k: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Rows before the zero-padded tail.
    pub valid_rows: usize,
}

impl<T> DeviceBlock<T> {
    pub fn mask(&self, block_len: usize) -> Vec<bool> {
        (0..block_len).map(|r| r < self.valid_rows).collect()
    }
}

struct KvBlock<T> {
    k: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    valid_rows: usize,
}

fn split_heads<T: Scalar>(x: &Tensor<T>, heads: usize) -> Result<Vec<Tensor<T>>> {
    let (_, width) = x.dims2()?;
    let d = width / heads;
    (0..heads).map(|h| x.slice_cols(h * d, (h + 1) * d)).collect()
}

fn merge_heads<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let (rows, d) = parts[0].dims2()?;
    let mut out = Vec::with_capacity(rows * d * parts.len());
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(r));
        }
    }
    Tensor::new(&[rows, d * parts.len()], out)
}

fn padded_rows<T: Scalar>(x: &Tensor<T>, start: usize, block_len: usize) -> Result<Tensor<T>> {
    let (rows, c) = x.dims2()?;
    let end = (start + block_len).min(rows);
    let mut data = x.data()[start * c..end * c].to_vec();
    data.resize(block_len * c, T::zero());
    Tensor::new(&[block_len, c], data)
}

fn check_inputs<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, cfg: &AttentionConfig) -> Result<()> {
    cfg.validate()?;
    let expect = [cfg.seq_len, cfg.model_width()];
    for (name, t) in [
        ("ring attention q", q),
        ("ring attention k", k),
        ("ring attention v", v),
    ] {
        if t.shape() != expect {
            return Err(Error::dim(name, t.shape(), &expect));
        }
    }
    Ok(())
}

/// Partitions `q`, `k`, `v` (`T × heads·head_dim`) into zero-padded device blocks.
pub fn split_blocks<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    cfg: &AttentionConfig,
) -> Result<Vec<DeviceBlock<T>>> {
    check_inputs(q, k, v, cfg)?;
    let b = cfg.block_len;
    (0..cfg.num_devices())
        .map(|i| {
            let start = i * b;
            Ok(DeviceBlock {
                index: i,
                q: split_heads(&padded_rows(q, start, b)?, cfg.num_heads)?,
                k: split_heads(&padded_rows(k, start, b)?, cfg.num_heads)?,
                v: split_heads(&padded_rows(v, start, b)?, cfg.num_heads)?,
                valid_rows: (cfg.seq_len - start).min(b),
            })
        })
        .collect()
}

enum WorkerFailure {
    Own(Error),
    PeerLost,
}

struct DeviceContext<'a> {
    cfg: &'a AttentionConfig,
    tracker: &'a ScoreTracker,
    barrier: &'a Barrier,
    fault: Option<usize>,
}

fn run_device<T: Scalar>(
    block: DeviceBlock<T>,
    inbox: Receiver<KvBlock<T>>,
    next: Sender<KvBlock<T>>,
    ctx: &DeviceContext<'_>,
) -> Result<Tensor<T>, WorkerFailure> {
    let b = ctx.cfg.block_len;
    let n = ctx.cfg.num_devices();
    let mut scores = ScoreBuffer::<T>::new(b * b, ctx.tracker);
    // Every device holds its score buffer before the first rotation.
    ctx.barrier.wait();
    if ctx.fault == Some(block.index) {
        return Err(WorkerFailure::Own(Error::Protocol("injected worker fault".into())));
    }

    let mut states: Vec<RingState<T>> = (0..ctx.cfg.num_heads)
        .map(|_| RingState::new(b, ctx.cfg.head_dim, n))
        .collect();
    let mut current = KvBlock {
        k: block.k,
        v: block.v,
        valid_rows: block.valid_rows,
    };
    let steps = ctx.cfg.rotations();
    for step in 0..steps {
        let mask: Vec<bool> = (0..b).map(|r| r < current.valid_rows).collect();
        for (h, state) in states.iter_mut().enumerate() {
            state
                .absorb(&block.q[h], &current.k[h], &current.v[h], &mask, scores.as_mut_slice())
                .map_err(WorkerFailure::Own)?;
        }
        if step + 1 < steps {
            next.send(current).map_err(|_| WorkerFailure::PeerLost)?;
            current = inbox.recv().map_err(|_| WorkerFailure::PeerLost)?;
        }
    }
    drop(scores);
    let heads = states
        .iter()
        .map(RingState::finalize)
        .collect::<Result<Vec<_>>>()
        .map_err(WorkerFailure::Own)?;
    merge_heads(&heads).map_err(WorkerFailure::Own)
}

fn run_ring<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    cfg: &AttentionConfig,
    tracker: &ScoreTracker,
    fault: Option<usize>,
) -> Result<Tensor<T>> {
    let blocks = split_blocks(q, k, v, cfg)?;
    let n = blocks.len();
    let barrier = Barrier::new(n);
    let ctx = DeviceContext {
        cfg,
        tracker,
        barrier: &barrier,
        fault,
    };
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel::<KvBlock<T>>()).unzip();

    let outcomes: Vec<thread::Result<Result<Tensor<T>, WorkerFailure>>> = thread::scope(|s| {
        let handles: Vec<_> = blocks
            .into_iter()
            .zip(receivers)
            .enumerate()
            .map(|(i, (block, inbox))| {
                // Device i passes its current key/value block to device i+1.
                let next = senders[(i + 1) % n].clone();
                let ctx = &ctx;
                thread::Builder::new()
                    .name(format!("ring-device-{i}"))
                    .spawn_scoped(s, move || run_device(block, inbox, next, ctx))
                    .expect("spawn ring worker")
            })
            .collect();
        drop(senders);
        handles.into_iter().map(|h| h.join()).collect()
    });

    let mut parts = Vec::with_capacity(n);
    let mut peer_lost = None;
    for (device, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(Ok(t)) => parts.push(t),
            Ok(Err(WorkerFailure::Own(e))) => {
                return Err(match e {
                    e @ Error::Execution { .. } => e,
                    e => Error::Execution {
                        device,
                        reason: e.to_string(),
                    },
                })
            }
            Ok(Err(WorkerFailure::PeerLost)) => {
                peer_lost.get_or_insert(device);
            }
            Err(_) => {
                return Err(Error::Execution {
                    device,
                    reason: "worker panicked".into(),
                })
            }
        }
    }
    if let Some(device) = peer_lost {
        return Err(Error::Execution {
            device,
            reason: "ring neighbour disconnected".into(),
        });
    }

    let width = cfg.model_width();
    let mut out = Vec::with_capacity(cfg.seq_len * width);
    for part in &parts {
        out.extend_from_slice(part.data());
    }
    out.truncate(cfg.seq_len * width);
    Tensor::new(&[cfg.seq_len, width], out)
}

/// Multi-head ring attention over `T × heads·head_dim` projections, one
/// worker thread per device.
pub fn ring_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    run_ring(q, k, v, cfg, &ScoreTracker::new(), None)
}

/// [`ring_attention`] recording score-buffer usage in `tracker`.
pub fn ring_attention_traced<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    cfg: &AttentionConfig,
    tracker: &ScoreTracker,
) -> Result<Tensor<T>> {
    run_ring(q, k, v, cfg, tracker, None)
}

/// Test hook: device `fail_device` aborts after the ring is established.
pub fn ring_attention_with_fault<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    cfg: &AttentionConfig,
    fail_device: usize,
) -> Result<Tensor<T>> {
    run_ring(q, k, v, cfg, &ScoreTracker::new(), Some(fail_device))
}

/// Dispatches to ring or vanilla attention.
pub fn multi_head_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    cfg: &AttentionConfig,
    mode: AttentionMode,
    tracker: &ScoreTracker,
) -> Result<Tensor<T>> {
    match mode {
        AttentionMode::Ring => ring_attention_traced(q, k, v, cfg, tracker),
        AttentionMode::Vanilla => {
            check_inputs(q, k, v, cfg)?;
            vanilla_attention_traced(q, k, v, cfg.num_heads, tracker)
        }
    }
}
