//! Dense kernels shared by every model component.

mod conv;

pub use conv::{conv1d, conv_transpose1d, conv_transpose_len, Conv1dParams};

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Scalar, Tensor};

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    parallel::for_each_chunk(&mut out, n, |i, row| {
        let arow = &ad[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &bd[p * n..(p + 1) * n];
            for (c, &bpj) in row.iter_mut().zip(brow) {
                *c = *c + aip * bpj;
            }
        }
    });
    Tensor::new(&[m, n], out)?.ensure_finite("matmul")
}

/// `x[m×k] · wᵀ + bias` with `w` stored as `[n×k]` (output-major, like a
/// fully connected layer).
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (m, k) = x.dims2()?;
    let (n, k2) = w.dims2()?;
    if k != k2 {
        return Err(Error::dim("linear", x.shape(), w.shape()));
    }
    if let Some(b) = bias {
        if b.len() != n {
            return Err(Error::dim("linear bias", w.shape(), b.shape()));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![T::zero(); m * n];
    parallel::for_each_chunk(&mut out, n, |i, row| {
        let xrow = &xd[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let wrow = &wd[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&a, &b) in xrow.iter().zip(wrow) {
                acc = acc + a * b;
            }
            *o = match bias {
                Some(b) => acc + b.data()[j],
                None => acc,
            };
        }
    });
    Tensor::new(&[m, n], out)?.ensure_finite("linear")
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = x.dims2()?;
    let xd = x.data();
    let mut out = vec![T::zero(); m * n];
    parallel::for_each_chunk(&mut out, n, |i, row| {
        let src = &xd[i * n..(i + 1) * n];
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (o, &v) in row.iter_mut().zip(src) {
            *o = (v - max).exp();
            sum = sum + *o;
        }
        for o in row.iter_mut() {
            *o = *o / sum;
        }
    });
    Tensor::new(&[m, n], out)?.ensure_finite("softmax_rows")
}

/// Elementwise `x + sin²(αx)/α` with one α per row (channel) of a `C×L`
/// tensor. A single α broadcasts to every channel.
pub fn snake<T: Scalar>(x: &Tensor<T>, alpha: &[T]) -> Result<Tensor<T>> {
    if let Some(bad) = alpha.iter().find(|a| !(**a > T::zero())) {
        return Err(Error::config(format!("snake alpha must be positive, got {bad}")));
    }
    let channels = if x.rank() == 1 { 1 } else { x.shape()[0] };
    if alpha.len() != 1 && alpha.len() != channels {
        return Err(Error::dim("snake", x.shape(), &[alpha.len()]));
    }
    let per_channel = x.len() / channels;
    let mut out = x.data().to_vec();
    parallel::for_each_chunk(&mut out, per_channel, |c, row| {
        let a = if alpha.len() == 1 { alpha[0] } else { alpha[c] };
        for v in row.iter_mut() {
            *v = snake_scalar(*v, a);
        }
    });
    Tensor::new(x.shape(), out)?.ensure_finite("snake")
}

#[inline]
pub fn snake_scalar<T: Scalar>(x: T, alpha: T) -> T {
    let s = (alpha * x).sin();
    x + s * s / alpha
}

/// Normalizes over the last axis, then applies `gain` and `bias`.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &[T], bias: &[T], eps: T) -> Result<Tensor<T>> {
    let d = *x.shape().last().unwrap();
    if gain.len() != d || bias.len() != d {
        return Err(Error::dim("layer_norm", x.shape(), &[gain.len(), bias.len()]));
    }
    let inv_d = T::one() / T::of(d as f64);
    let mut out = x.data().to_vec();
    parallel::for_each_chunk(&mut out, d, |_, row| {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let inv_std = T::one() / (var + eps).sqrt();
        for ((v, &g), &b) in row.iter_mut().zip(gain).zip(bias) {
            *v = (*v - mean) * inv_std * g + b;
        }
    });
    Tensor::new(x.shape(), out)?.ensure_finite("layer_norm")
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Swish / SiLU: `x·sigmoid(x)`.
pub fn swish<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * sigmoid(v))
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { v * slope })
}

/// Gated linear unit over the last axis: splits `[.., 2d]` into halves
/// `(a, b)` and returns `a·sigmoid(b)`.
pub fn glu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = x.dims2()?;
    if n % 2 != 0 {
        return Err(Error::dim("glu", x.shape(), &[m, n + 1]));
    }
    let h = n / 2;
    let mut out = Vec::with_capacity(m * h);
    for i in 0..m {
        let row = x.row(i);
        out.extend((0..h).map(|j| row[j] * sigmoid(row[h + j])));
    }
    Tensor::new(&[m, h], out)
}
