//! Layer kernels on channel-major activations.
//!
//! Activations are stored `[channel, sample, row, column]` so that a
//! convolution over the whole batch is one matrix product and batch-norm
//! statistics run over contiguous memory.

use crate::error::{Error, Result};
use crate::masking::FeatureBlock;
use crate::scalar::Scalar;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Act<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    pub fn like(&self, data: Vec<T>) -> Self {
        Self {
            c: self.c,
            n: self.n,
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Per-channel length.
    pub fn plane_len(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn from_block(block: &FeatureBlock<T>) -> Self {
        let (n, c, h, w) = block.dims();
        let hw = h * w;
        let mut out = Self::zeros(c, n, h, w);
        for b in 0..n {
            for ch in 0..c {
                let dst = (ch * n + b) * hw;
                out.data[dst..dst + hw].copy_from_slice(block.plane(b, ch));
            }
        }
        out
    }

    pub fn to_nchw(&self) -> Vec<T> {
        let hw = self.h * self.w;
        let mut out = vec![T::zero(); self.data.len()];
        for ch in 0..self.c {
            for b in 0..self.n {
                let src = (ch * self.n + b) * hw;
                let dst = (b * self.c + ch) * hw;
                out[dst..dst + hw].copy_from_slice(&self.data[src..src + hw]);
            }
        }
        out
    }

    pub fn to_block(&self) -> Result<FeatureBlock<T>> {
        FeatureBlock::new((self.n, self.c, self.h, self.w), self.to_nchw())
    }

    pub fn ensure_finite(&self, layer: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::numeric(layer))
        }
    }
}

/// Reorder an NCHW buffer into channel-major order.
pub(crate) fn nchw_to_cnhw<T: Copy + Default>(values: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::default(); values.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = (b * c + ch) * hw;
            let dst = (ch * n + b) * hw;
            out[dst..dst + hw].copy_from_slice(&values[src..src + hw]);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
}

pub(crate) struct ConvCache<T> {
    col: Vec<T>,
    in_shape: (usize, usize, usize, usize),
}

fn im2col<T: Scalar>(x: &Act<T>, g: &ConvGeom, ho: usize, wo: usize) -> Vec<T> {
    let cols = x.n * ho * wo;
    let rows = g.cin * g.k * g.k;
    let mut col = vec![T::zero(); rows * cols];
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (ci * g.k + ky) * g.k + kx;
                let row = &mut col[r * cols..(r + 1) * cols];
                for b in 0..x.n {
                    let src = &x.data[(ci * x.n + b) * x.h * x.w..(ci * x.n + b + 1) * x.h * x.w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let drow = &mut row[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < x.w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, shape: (usize, usize, usize, usize), ho: usize, wo: usize) -> Act<T> {
    let (c, n, h, w) = shape;
    let mut x = Act::zeros(c, n, h, w);
    let cols = n * ho * wo;
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (ci * g.k + ky) * g.k + kx;
                let row = &col[r * cols..(r + 1) * cols];
                for b in 0..n {
                    let dst = &mut x.data[(ci * n + b) * h * w..(ci * n + b + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        let srow = &row[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                        for (ox, s) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] = drow[ix as usize] + *s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

pub(crate) fn conv_forward<T: Scalar>(x: &Act<T>, weight: &[T], g: &ConvGeom) -> Result<(Act<T>, ConvCache<T>)> {
    if x.c != g.cin || weight.len() != g.weight_len() {
        return Err(Error::structural(format!(
            "conv expects {} input channels and {} weights, got {} and {}",
            g.cin,
            g.weight_len(),
            x.c,
            weight.len()
        )));
    }
    if x.h + 2 * g.pad < g.k || x.w + 2 * g.pad < g.k {
        return Err(Error::structural(format!("conv kernel {} larger than padded input {}x{}", g.k, x.h, x.w)));
    }
    let (ho, wo) = g.out_hw(x.h, x.w);
    let col = im2col(x, g, ho, wo);
    let kk = g.cin * g.k * g.k;
    let cols = x.n * ho * wo;
    let mut out = Act::zeros(g.cout, x.n, ho, wo);
    T::gemm(
        g.cout,
        kk,
        cols,
        T::one(),
        weight,
        (kk as isize, 1),
        &col,
        (cols as isize, 1),
        T::zero(),
        &mut out.data,
        (cols as isize, 1),
    );
    Ok((
        out,
        ConvCache {
            col,
            in_shape: (x.c, x.n, x.h, x.w),
        },
    ))
}

/// Returns `(weight gradient, input gradient if requested)`.
pub(crate) fn conv_backward<T: Scalar>(
    dout: &Act<T>,
    weight: &[T],
    g: &ConvGeom,
    cache: &ConvCache<T>,
    need_input_grad: bool,
) -> (Vec<T>, Option<Act<T>>) {
    let kk = g.cin * g.k * g.k;
    let cols = dout.plane_len();
    let mut dw = vec![T::zero(); g.weight_len()];
    T::gemm(
        g.cout,
        cols,
        kk,
        T::one(),
        &dout.data,
        (cols as isize, 1),
        &cache.col,
        (1, cols as isize),
        T::zero(),
        &mut dw,
        (kk as isize, 1),
    );
    if !need_input_grad {
        return (dw, None);
    }
    let mut dcol = vec![T::zero(); kk * cols];
    T::gemm(
        kk,
        g.cout,
        cols,
        T::one(),
        weight,
        (1, kk as isize),
        &dout.data,
        (cols as isize, 1),
        T::zero(),
        &mut dcol,
        (cols as isize, 1),
    );
    let dx = col2im(&dcol, g, cache.in_shape, dout.h, dout.w);
    (dw, Some(dx))
}

pub(crate) struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Batch statistics observed in a training-mode pass.
#[derive(Clone, Debug)]
pub(crate) struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

pub(crate) struct BnParams<'a, T> {
    pub gamma: &'a [T],
    pub beta: &'a [T],
    pub running_mean: &'a [T],
    pub running_var: &'a [T],
}

pub(crate) fn bn_forward<T: Scalar>(
    x: &Act<T>,
    p: &BnParams<'_, T>,
    training: bool,
) -> Result<(Act<T>, BnCache<T>, Option<BnBatchStats>)> {
    if p.gamma.len() != x.c {
        return Err(Error::structural(format!("batch norm over {} channels got {}", p.gamma.len(), x.c)));
    }
    let m = x.plane_len();
    let eps = T::from_f64_lossy(BN_EPS);
    let mut out = x.like(vec![T::zero(); x.data.len()]);
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut inv_std = Vec::with_capacity(x.c);
    let mut stats = BnBatchStats {
        mean: Vec::new(),
        var_unbiased: Vec::new(),
    };
    for c in 0..x.c {
        let src = &x.data[c * m..(c + 1) * m];
        let (mean, var) = if training {
            let mf = T::from_usize(m).unwrap();
            let mean = src.iter().copied().sum::<T>() / mf;
            let var = src.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / mf;
            stats.mean.push(mean.as_f64());
            let unbiased = if m > 1 { var.as_f64() * m as f64 / (m - 1) as f64 } else { var.as_f64() };
            stats.var_unbiased.push(unbiased);
            (mean, var)
        } else {
            (p.running_mean[c], p.running_var[c])
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std.push(istd);
        let (g, b) = (p.gamma[c], p.beta[c]);
        let xh = &mut xhat[c * m..(c + 1) * m];
        let dst = &mut out.data[c * m..(c + 1) * m];
        for ((d, h), s) in dst.iter_mut().zip(xh.iter_mut()).zip(src) {
            *h = (*s - mean) * istd;
            *d = g * *h + b;
        }
    }
    Ok((out, BnCache { xhat, inv_std }, training.then_some(stats)))
}

/// Returns `(dgamma, dbeta, dx)`.
pub(crate) fn bn_backward<T: Scalar>(
    dout: &Act<T>,
    gamma: &[T],
    cache: &BnCache<T>,
    training: bool,
) -> (Vec<T>, Vec<T>, Act<T>) {
    let m = dout.plane_len();
    let mf = T::from_usize(m).unwrap();
    let mut dgamma = vec![T::zero(); dout.c];
    let mut dbeta = vec![T::zero(); dout.c];
    let mut dx = dout.like(vec![T::zero(); dout.data.len()]);
    for c in 0..dout.c {
        let dy = &dout.data[c * m..(c + 1) * m];
        let xh = &cache.xhat[c * m..(c + 1) * m];
        let db: T = dy.iter().copied().sum();
        let dg: T = dy.iter().zip(xh).map(|(a, b)| *a * *b).sum();
        dgamma[c] = dg;
        dbeta[c] = db;
        let dst = &mut dx.data[c * m..(c + 1) * m];
        if training {
            let k = gamma[c] * cache.inv_std[c] / mf;
            for ((d, y), h) in dst.iter_mut().zip(dy).zip(xh) {
                *d = k * (mf * *y - db - *h * dg);
            }
        } else {
            let k = gamma[c] * cache.inv_std[c];
            for (d, y) in dst.iter_mut().zip(dy) {
                *d = k * *y;
            }
        }
    }
    (dgamma, dbeta, dx)
}

pub(crate) fn relu_inplace<T: Scalar>(x: &mut Act<T>) {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gate `grad` by the positive entries of a ReLU output.
pub(crate) fn relu_backward_inplace<T: Scalar>(grad: &mut Act<T>, out: &Act<T>) {
    for (g, o) in grad.data.iter_mut().zip(&out.data) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub(crate) struct PoolCache {
    argmax: Vec<usize>,
    in_shape: (usize, usize, usize, usize),
}

impl PoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
pub(crate) fn maxpool_forward<T: Scalar>(x: &Act<T>) -> Result<(Act<T>, PoolCache)> {
    if x.h < 2 || x.w < 2 {
        return Err(Error::structural(format!("max pool needs at least 2x2 input, got {}x{}", x.h, x.w)));
    }
    let (ho, wo) = (x.h / 2, x.w / 2);
    let mut out = Act::zeros(x.c, x.n, ho, wo);
    let mut argmax = vec![0; out.data.len()];
    for plane in 0..x.c * x.n {
        let src = plane * x.h * x.w;
        let dst = plane * ho * wo;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = src + 2 * oy * x.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = src + (2 * oy + dy) * x.w + 2 * ox + dx;
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                out.data[dst + oy * wo + ox] = x.data[best];
                argmax[dst + oy * wo + ox] = best;
            }
        }
    }
    Ok((
        out,
        PoolCache {
            argmax,
            in_shape: (x.c, x.n, x.h, x.w),
        },
    ))
}

pub(crate) fn maxpool_backward<T: Scalar>(dout: &Act<T>, cache: &PoolCache) -> Act<T> {
    let (c, n, h, w) = cache.in_shape;
    let mut dx = Act::zeros(c, n, h, w);
    for (g, &i) in dout.data.iter().zip(&cache.argmax) {
        dx.data[i] = dx.data[i] + *g;
    }
    dx
}

/// Global average pool to a sample-major `n x c` matrix.
pub(crate) fn gap_forward<T: Scalar>(x: &Act<T>) -> Vec<T> {
    let hw = x.h * x.w;
    let scale = T::one() / T::from_usize(hw).unwrap();
    let mut out = vec![T::zero(); x.n * x.c];
    for c in 0..x.c {
        for b in 0..x.n {
            let s: T = x.data[(c * x.n + b) * hw..(c * x.n + b + 1) * hw].iter().copied().sum();
            out[b * x.c + c] = s * scale;
        }
    }
    out
}

pub(crate) fn gap_backward<T: Scalar>(demb: &[T], shape: (usize, usize, usize, usize)) -> Act<T> {
    let (c, n, h, w) = shape;
    let hw = h * w;
    let scale = T::one() / T::from_usize(hw).unwrap();
    let mut dx = Act::zeros(c, n, h, w);
    for ch in 0..c {
        for b in 0..n {
            let g = demb[b * c + ch] * scale;
            dx.data[(ch * n + b) * hw..(ch * n + b + 1) * hw].fill(g);
        }
    }
    dx
}

/// `logits = x W^T + bias` for sample-major `x` (`n x d`) and `W` (`k x d`).
pub(crate) fn linear_forward<T: Scalar>(x: &[T], n: usize, d: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let k = bias.len();
    let mut out = vec![T::zero(); n * k];
    for row in out.chunks_mut(k) {
        row.copy_from_slice(bias);
    }
    T::gemm(n, d, k, T::one(), x, (d as isize, 1), weight, (1, d as isize), T::one(), &mut out, (k as isize, 1));
    out
}

/// Returns `(dW, dbias, dx)`.
pub(crate) fn linear_backward<T: Scalar>(
    dout: &[T],
    x: &[T],
    n: usize,
    d: usize,
    weight: &[T],
    k: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); k * d];
    T::gemm(k, n, d, T::one(), dout, (1, k as isize), x, (d as isize, 1), T::zero(), &mut dw, (d as isize, 1));
    let mut db = vec![T::zero(); k];
    for row in dout.chunks(k) {
        for (a, b) in db.iter_mut().zip(row) {
            *a = *a + *b;
        }
    }
    let mut dx = vec![T::zero(); n * d];
    T::gemm(n, k, d, T::one(), dout, (k as isize, 1), weight, (d as isize, 1), T::zero(), &mut dx, (d as isize, 1));
    (dw, db, dx)
}

pub(crate) fn add_inplace<T: Scalar>(a: &mut Act<T>, b: &Act<T>) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x = *x + *y;
    }
}
