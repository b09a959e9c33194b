use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv1dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv1dParams {
    pub fn padded(padding: usize) -> Self {
        Self {
            padding,
            ..Self::default()
        }
    }
}

/// Cross-correlation of `x[C_in×L]` with `w[C_out × C_in/groups × K]`.
pub fn conv1d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, p: Conv1dParams) -> Result<Tensor<T>> {
    let (c_in, len) = x.dims2()?;
    let [c_out, c_in_g, k] = w.shape()[..] else {
        return Err(Error::dim("conv1d weight", w.shape(), &[0, 0, 0]));
    };
    if p.groups == 0 || c_in % p.groups != 0 || c_out % p.groups != 0 {
        return Err(Error::config(format!(
            "conv1d: {c_in} input / {c_out} output channels not divisible into {} groups",
            p.groups
        )));
    }
    if c_in / p.groups != c_in_g {
        return Err(Error::dim("conv1d", x.shape(), w.shape()));
    }
    if p.stride == 0 || p.dilation == 0 {
        return Err(Error::config("conv1d: stride and dilation must be positive"));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::dim("conv1d bias", w.shape(), b.shape()));
        }
    }
    let span = p.dilation * (k - 1) + 1;
    if len + 2 * p.padding < span {
        return Err(Error::config(format!(
            "conv1d: padded length {} shorter than kernel span {span}",
            len + 2 * p.padding
        )));
    }
    let out_len = (len + 2 * p.padding - span) / p.stride + 1;
    let out_per_group = c_out / p.groups;
    let wd = w.data();
    // Split each input row into `stride` phases so every tap reads a contiguous slice.
    let s = p.stride;
    let phase_len = len.div_ceil(s);
    let phased: std::borrow::Cow<'_, [T]> = if s == 1 {
        std::borrow::Cow::Borrowed(x.data())
    } else {
        let xd = x.data();
        let mut buf = vec![T::zero(); c_in * s * phase_len];
        for ci in 0..c_in {
            for (i, &v) in xd[ci * len..(ci + 1) * len].iter().enumerate() {
                buf[(ci * s + i % s) * phase_len + i / s] = v;
            }
        }
        std::borrow::Cow::Owned(buf)
    };

    let mut out = vec![T::zero(); c_out * out_len];
    parallel::for_each_chunk(&mut out, out_len, |co, row| {
        let g = co / out_per_group;
        if let Some(b) = bias {
            row.fill(b.data()[co]);
        }
        for ci in 0..c_in_g {
            let channel = g * c_in_g + ci;
            let wrow = &wd[(co * c_in_g + ci) * k..(co * c_in_g + ci + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                let offset = (kk * p.dilation) as isize - p.padding as isize;
                let (lo, hi) = valid_range(offset, s, len, row.len());
                if lo >= hi {
                    continue;
                }
                let phase = offset.rem_euclid(s as isize) as usize;
                let start = (lo as isize + offset.div_euclid(s as isize)) as usize;
                let base = (channel * s + phase) * phase_len + start;
                let src = &phased[base..base + (hi - lo)];
                for (y, &xv) in row[lo..hi].iter_mut().zip(src) {
                    *y = *y + wv * xv;
                }
            }
        }
    });
    Tensor::new(&[c_out, out_len], out)?.ensure_finite("conv1d")
}

/// Output positions `t` with `t·stride + offset` inside `0..len`.
fn valid_range(offset: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    (lo as usize, (hi as usize).min(out_len).max(lo as usize))
}

/// Output length of a transposed convolution, or a config error if it is not positive.
pub fn conv_transpose_len(len: usize, stride: usize, padding: usize, kernel: usize) -> Result<usize> {
    let out = (len as isize - 1) * stride as isize - 2 * padding as isize + kernel as isize;
    if len == 0 || out <= 0 {
        return Err(Error::config(format!(
            "conv_transpose1d: non-positive output length {out} (L={len}, stride={stride}, padding={padding}, K={kernel})"
        )));
    }
    Ok(out as usize)
}

/// Transposed convolution of `x[C_in×L]` with `w[C_in×C_out×K]`:
/// `out[co][t·stride + k − padding] += x[ci][t]·w[ci][co][k]`.
pub fn conv_transpose1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (c_in, len) = x.dims2()?;
    let [w_in, c_out, k] = w.shape()[..] else {
        return Err(Error::dim("conv_transpose1d weight", w.shape(), &[0, 0, 0]));
    };
    if w_in != c_in {
        return Err(Error::dim("conv_transpose1d", x.shape(), w.shape()));
    }
    if stride == 0 {
        return Err(Error::config("conv_transpose1d: stride must be positive"));
    }
    let out_len = conv_transpose_len(len, stride, padding, k)?;
    let (xd, wd) = (x.data(), w.data());

    let mut out = vec![T::zero(); c_out * out_len];
    parallel::for_each_chunk(&mut out, out_len, |co, row| {
        if let Some(b) = bias {
            row.fill(b.data()[co]);
        }
        for ci in 0..c_in {
            let xrow = &xd[ci * len..(ci + 1) * len];
            let wrow = &wd[(ci * c_out + co) * k..(ci * c_out + co + 1) * k];
            for (t, &xv) in xrow.iter().enumerate() {
                let base = (t * stride) as isize - padding as isize;
                for (kk, &wv) in wrow.iter().enumerate() {
                    let dst = base + kk as isize;
                    if dst >= 0 && (dst as usize) < out_len {
                        row[dst as usize] = row[dst as usize] + xv * wv;
                    }
                }
            }
        }
    });
    Tensor::new(&[c_out, out_len], out)?.ensure_finite("conv_transpose1d")
}
