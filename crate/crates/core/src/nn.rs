//! Forward and backward kernels for the neural primitives.
//!
//! Everything here is a plain function of tensors. The tape in
//! [`crate::tape`] records which kernel produced a node and calls the
//! matching backward kernel during the reverse sweep.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default epsilon for layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = m.dims2("softmax_rows")?;
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = m.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= total;
        }
    }
    Tensor::new([r, c], out)
}

/// Row-wise log-softmax via the log-sum-exp shift.
pub fn log_softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = m.dims2("log_softmax_rows")?;
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = m.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::new([r, c], out)
}

/// `dx = y ⊙ (g − rowsum(g ⊙ y))` for `y = softmax(x)`.
pub fn softmax_rows_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let c = y.shape()[1];
    let mut out = g.clone();
    for (yr, gr) in y.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
        let dot: T = yr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
        for (gv, &yv) in gr.iter_mut().zip(yr) {
            *gv = yv * (*gv - dot);
        }
    }
    out
}

/// `dx = g − softmax(x) · rowsum(g)` for `y = log_softmax(x)`.
pub fn log_softmax_rows_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let c = y.shape()[1];
    let mut out = g.clone();
    for (yr, gr) in y.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
        let total: T = gr.iter().copied().sum();
        for (gv, &yv) in gr.iter_mut().zip(yr) {
            *gv -= yv.exp() * total;
        }
    }
    out
}

/// Cached statistics from a layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes every row of `x` to zero mean and unit variance, then applies
/// `gain` and `bias`. A constant row normalizes to zeros.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let (r, d) = x.dims2("layer_norm")?;
    for (p, name) in [(gain, "gain"), (bias, "bias")] {
        if p.len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                dim: name,
                expected: d,
                got: p.len(),
            });
        }
    }
    let n = T::lit(d as f64);
    let mut normalized = Vec::with_capacity(r * d);
    let mut out = Vec::with_capacity(r * d);
    let mut inv_std = Vec::with_capacity(r);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let s = T::one() / (var + eps).sqrt();
        inv_std.push(s);
        for (j, &v) in row.iter().enumerate() {
            let xh = (v - mean) * s;
            normalized.push(xh);
            out.push(xh * gain.data()[j] + bias.data()[j]);
        }
    }
    Ok((
        Tensor::new([r, d], out)?,
        LayerNormCache {
            normalized: Tensor::new([r, d], normalized)?,
            inv_std,
        },
    ))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let xh = &cache.normalized;
    let d = xh.shape()[1];
    let n = T::lit(d as f64);
    let mut dx = Vec::with_capacity(xh.len());
    let mut dgain = vec![T::zero(); d];
    let mut dbias = vec![T::zero(); d];
    for (i, (xr, gr)) in xh.data().chunks(d).zip(g.data().chunks(d)).enumerate() {
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for j in 0..d {
            let dxh = gr[j] * gain.data()[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xr[j];
            dgain[j] += gr[j] * xr[j];
            dbias[j] += gr[j];
        }
        mean_dxh /= n;
        mean_dxh_xh /= n;
        let s = cache.inv_std[i];
        for j in 0..d {
            let dxh = gr[j] * gain.data()[j];
            dx.push(s * (dxh - mean_dxh - xr[j] * mean_dxh_xh));
        }
    }
    let shape = xh.shape().to_vec();
    (
        Tensor::new(shape, dx).expect("layer_norm dx"),
        Tensor::new(gain.shape().to_vec(), dgain).expect("layer_norm dgain"),
        Tensor::new(gain.shape().to_vec(), dbias).expect("layer_norm dbias"),
    )
}

/// Geometry of a 1-D convolution over an optional leading batch axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub len_out: usize,
}

impl Conv1dGeom {
    pub fn check<T: Scalar>(
        x: &Tensor<T>,
        kernels: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (batch, c_in, len) = match x.shape() {
            [c, l] => (1, *c, *l),
            [b, c, l] => (*b, *c, *l),
            other => {
                return Err(TensorError::Rank {
                    op: "conv1d",
                    expected: 2,
                    got: other.to_vec(),
                })
            }
        };
        let (c_out, kc_in, kernel) = kernels.dims3("conv1d")?;
        if kc_in != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                dim: "channels_in",
                expected: c_in,
                got: kc_in,
            });
        }
        if let Some(b) = bias {
            if b.len() != c_out {
                return Err(TensorError::ShapeMismatch {
                    op: "conv1d",
                    dim: "bias",
                    expected: c_out,
                    got: b.len(),
                });
            }
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv1d",
                msg: "stride must be at least 1".into(),
            });
        }
        if kernel == 0 || kernel > len + 2 * padding {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                dim: "kernel",
                expected: len + 2 * padding,
                got: kernel,
            });
        }
        let len_out = (len + 2 * padding - kernel) / stride + 1;
        Ok(Self {
            batch,
            c_in,
            c_out,
            len,
            kernel,
            stride,
            padding,
            len_out,
        })
    }

    /// Input position read by output `t` at tap `k`, if inside the signal.
    #[inline]
    fn src(&self, t: usize, k: usize) -> Option<usize> {
        (t * self.stride + k)
            .checked_sub(self.padding)
            .filter(|&p| p < self.len)
    }

    /// Output positions `t` for which tap `k` reads inside the signal.
    #[inline]
    fn valid_range(&self, k: usize) -> std::ops::Range<usize> {
        let lo = if k >= self.padding {
            0
        } else {
            (self.padding - k).div_ceil(self.stride)
        };
        let hi = if self.len + self.padding > k {
            ((self.len + self.padding - k - 1) / self.stride + 1).min(self.len_out)
        } else {
            0
        };
        lo..hi.max(lo)
    }

    fn out_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.batch, self.c_out, self.len_out]
        } else {
            vec![self.c_out, self.len_out]
        }
    }
}

/// Cross-correlation of `x: [c_in × len]` (or `[batch × c_in × len]`) with
/// `kernels: [c_out × c_in × k]`.
pub fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Conv1dGeom::check(x, kernels, bias, stride, padding)?;
    let (xd, wd) = (x.data(), kernels.data());
    let mut out = vec![T::zero(); g.batch * g.c_out * g.len_out];
    for n in 0..g.batch {
        let xs = &xd[n * g.c_in * g.len..(n + 1) * g.c_in * g.len];
        for o in 0..g.c_out {
            let b = bias.map_or(T::zero(), |b| b.data()[o]);
            let base = (n * g.c_out + o) * g.len_out;
            let orow = &mut out[base..base + g.len_out];
            orow.iter_mut().for_each(|v| *v = b);
            for c in 0..g.c_in {
                let xrow = &xs[c * g.len..(c + 1) * g.len];
                let wrow = &wd[(o * g.c_in + c) * g.kernel..(o * g.c_in + c + 1) * g.kernel];
                for (k, &w) in wrow.iter().enumerate() {
                    for t in g.valid_range(k) {
                        orow[t] += w * xrow[t * g.stride + k - g.padding];
                    }
                }
            }
        }
    }
    Tensor::new(g.out_shape(x.rank() == 3), out)
}

/// Returns `(dx, dkernels, dbias)` for [`conv1d`].
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    geom: &Conv1dGeom,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (xd, wd, gd) = (x.data(), kernels.data(), g.data());
    let mut dx = vec![T::zero(); xd.len()];
    let mut dw = vec![T::zero(); wd.len()];
    let mut db = vec![T::zero(); geom.c_out];
    let (cl, ol) = (geom.c_in * geom.len, geom.c_out * geom.len_out);
    for n in 0..geom.batch {
        let xs = &xd[n * cl..(n + 1) * cl];
        let dxs = &mut dx[n * cl..(n + 1) * cl];
        for o in 0..geom.c_out {
            let grow = &gd[n * ol + o * geom.len_out..n * ol + (o + 1) * geom.len_out];
            db[o] += grow.iter().copied().sum::<T>();
            for c in 0..geom.c_in {
                let base = (o * geom.c_in + c) * geom.kernel;
                let xrow = &xs[c * geom.len..(c + 1) * geom.len];
                let dxrow = &mut dxs[c * geom.len..(c + 1) * geom.len];
                for k in 0..geom.kernel {
                    let w = wd[base + k];
                    let mut acc = T::zero();
                    for t in geom.valid_range(k) {
                        let p = t * geom.stride + k - geom.padding;
                        acc += grow[t] * xrow[p];
                        dxrow[p] += grow[t] * w;
                    }
                    dw[base + k] += acc;
                }
            }
        }
    }
    debug_assert!((0..geom.kernel).all(|k| geom.valid_range(k).all(|t| geom.src(t, k).is_some())));
    (
        Tensor::new(x.shape().to_vec(), dx).expect("conv dx"),
        Tensor::new(kernels.shape().to_vec(), dw).expect("conv dw"),
        Tensor::new([geom.c_out], db).expect("conv db"),
    )
}

fn pool_dims<T: Scalar>(x: &Tensor<T>, window: usize, stride: usize) -> Result<(usize, usize, usize)> {
    let Some((&len, lead)) = x.shape().split_last() else {
        return Err(TensorError::Rank {
            op: "avg_pool1d",
            expected: 1,
            got: Vec::new(),
        });
    };
    let rows = lead.iter().product();
    if window == 0 || window > len {
        return Err(TensorError::ShapeMismatch {
            op: "avg_pool1d",
            dim: "window",
            expected: len,
            got: window,
        });
    }
    if stride == 0 {
        return Err(TensorError::Invalid {
            op: "avg_pool1d",
            msg: "stride must be at least 1".into(),
        });
    }
    Ok((rows, len, (len - window) / stride + 1))
}

/// Mean pooling along the last axis; leading axes are independent rows.
pub fn avg_pool1d<T: Scalar>(x: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let (rows, len, len_out) = pool_dims(x, window, stride)?;
    let inv = T::one() / T::lit(window as f64);
    let mut out = Vec::with_capacity(rows * len_out);
    for r in 0..rows {
        let row = &x.data()[r * len..(r + 1) * len];
        for t in 0..len_out {
            let s: T = row[t * stride..t * stride + window].iter().copied().sum();
            out.push(s * inv);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = len_out;
    Tensor::new(shape, out)
}

pub fn avg_pool1d_backward<T: Scalar>(
    x_shape: &[usize],
    window: usize,
    stride: usize,
    g: &Tensor<T>,
) -> Tensor<T> {
    let (&len, lead) = x_shape.split_last().expect("pool input rank");
    let rows: usize = lead.iter().product();
    let len_out = (len - window) / stride + 1;
    let inv = T::one() / T::lit(window as f64);
    let mut dx = vec![T::zero(); rows * len];
    for r in 0..rows {
        for t in 0..len_out {
            let gv = g.data()[r * len_out + t] * inv;
            for v in &mut dx[r * len + t * stride..r * len + t * stride + window] {
                *v += gv;
            }
        }
    }
    Tensor::new(x_shape.to_vec(), dx).expect("pool dx")
}

/// Batched product `op(a[i]) · op(b[i])` over `[batch × · × ·]` tensors,
/// where `op` optionally transposes the last two axes.
pub fn batch_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, trans_a: bool, trans_b: bool) -> Result<Tensor<T>> {
    let (ba, ar, ac) = a.dims3("batch_matmul")?;
    let (bb, br, bc) = b.dims3("batch_matmul")?;
    if ba != bb {
        return Err(TensorError::ShapeMismatch {
            op: "batch_matmul",
            dim: "batch",
            expected: ba,
            got: bb,
        });
    }
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "batch_matmul",
            dim: "inner",
            expected: k,
            got: k2,
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); ba * m * n];
    for i in 0..ba {
        let ai = &ad[i * ar * ac..(i + 1) * ar * ac];
        let bi = &bd[i * br * bc..(i + 1) * br * bc];
        let oi = &mut out[i * m * n..(i + 1) * m * n];
        for r in 0..m {
            for p in 0..k {
                let av = if trans_a { ai[p * ac + r] } else { ai[r * ac + p] };
                if av == T::zero() {
                    continue;
                }
                let orow = &mut oi[r * n..(r + 1) * n];
                if trans_b {
                    for (c, o) in orow.iter_mut().enumerate() {
                        *o += av * bi[c * bc + p];
                    }
                } else {
                    for (o, &bv) in orow.iter_mut().zip(&bi[p * bc..(p + 1) * bc]) {
                        *o += av * bv;
                    }
                }
            }
        }
    }
    Tensor::new([ba, m, n], out)
}

/// Swaps the last two axes of a `[batch × m × n]` tensor.
pub fn batch_transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, m, n) = a.dims3("batch_transpose")?;
    let d = a.data();
    let mut out = Vec::with_capacity(d.len());
    for i in 0..b {
        for c in 0..n {
            for r in 0..m {
                out.push(d[i * m * n + r * n + c]);
            }
        }
    }
    Tensor::new([b, n, m], out)
}

/// Standard sinusoidal position table `[len × width]`: even columns
/// `sin(pos / 10000^(2i/width))`, odd columns the matching cosine.
pub fn sinusoidal_positions<T: Scalar>(len: usize, width: usize) -> Tensor<T> {
    Tensor::from_fn([len, width], |idx| {
        let (pos, j) = (idx / width, idx % width);
        let pair = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / width as f64);
        T::lit(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}
