use super::dot;
use super::memory::{ScoreBuffer, ScoreTracker};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Scalar, Tensor};

/// `softmax(Q·Kᵀ/√d_k)·V` for one head with the full `T×T` score matrix.
pub fn vanilla_attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    vanilla_attention_traced(q, k, v, 1, &ScoreTracker::new())
}

/// Multi-head vanilla attention over `T × heads·head_dim` inputs. Heads run
/// one after another and share a single `T×T` score buffer.
pub fn vanilla_attention_traced<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    num_heads: usize,
    tracker: &ScoreTracker,
) -> Result<Tensor<T>> {
    let (t, width) = q.dims2()?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::dim("vanilla_attention", q.shape(), k.shape()));
    }
    if num_heads == 0 || width % num_heads != 0 {
        return Err(Error::config(format!(
            "width {width} not divisible by {num_heads} heads"
        )));
    }
    let d = width / num_heads;
    let scale = T::one() / T::of(d as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut scores = ScoreBuffer::<T>::new(t * t, tracker);
    let mut out = vec![T::zero(); t * width];

    for h in 0..num_heads {
        let col = |row: usize| row * width + h * d;
        // Contiguous per-head copies keep the inner loops on unit stride.
        let gather = |src: &[T]| -> Vec<T> { (0..t).flat_map(|r| src[col(r)..col(r) + d].iter().copied()).collect() };
        let (kh, vh) = (gather(kd), gather(vd));
        let mut head_out = vec![T::zero(); t * d];
        parallel::for_each_chunk_pair(&mut head_out, d, scores.as_mut_slice(), t, |i, acc, srow| {
            let qrow = &qd[col(i)..col(i) + d];
            let mut max = T::neg_infinity();
            for (s, krow) in srow.iter_mut().zip(kh.chunks_exact(d)) {
                *s = dot(qrow, krow) * scale;
                max = max.max(*s);
            }
            let mut den = T::zero();
            for (&s, vrow) in srow.iter().zip(vh.chunks_exact(d)) {
                let p = (s - max).exp();
                den = den + p;
                for (a, &vv) in acc.iter_mut().zip(vrow) {
                    *a = *a + p * vv;
                }
            }
            for a in acc.iter_mut() {
                *a = *a / den;
            }
        });
        for i in 0..t {
            out[col(i)..col(i) + d].copy_from_slice(&head_out[i * d..(i + 1) * d]);
        }
    }
    Tensor::new(&[t, width], out)?.ensure_finite("vanilla attention")
}
