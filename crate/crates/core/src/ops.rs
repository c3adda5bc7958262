//! Layer primitives with hand-written forward and backward passes.
//!
//! Every backward here is the exact analytic gradient of its forward. Batch
//! work is split into fixed-size shards so that parameter-gradient
//! reductions always happen in the same order, independent of the number of
//! worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples per shard for parallel batch work.
const SHARD: usize = 8;

/// `c[m,n] += a[m,k] * b[k,n]`, all row-major. Every `c` element sums its
/// `k` products in ascending order; rows are processed four at a time so
/// that each loaded `b` row feeds four accumulators.
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let av = [a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]];
            if av == [0.0; 4] {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for col in 0..n {
                let bv = brow[col];
                c0[col] += av[0] * bv;
                c1[col] += av[1] * bv;
                c2[col] += av[2] * bv;
                c3[col] += av[3] * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

/// Dot products of `x` with four rows at once. Each sum runs in ascending
/// index order, exactly as a plain loop would; the four independent chains
/// only add instruction-level parallelism.
#[inline]
fn dot4(x: &[f64], r0: &[f64], r1: &[f64], r2: &[f64], r3: &[f64]) -> [f64; 4] {
    let mut acc = [0.0; 4];
    for i in 0..x.len() {
        let xv = x[i];
        acc[0] += xv * r0[i];
        acc[1] += xv * r1[i];
        acc[2] += xv * r2[i];
        acc[3] += xv * r3[i];
    }
    acc
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

/// `out[j] = dot(x, rows[j])` for `rows` of length `n` packed in `b`.
fn dots(x: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    let k = out.len();
    let mut j = 0;
    while j + 4 <= k {
        let r = |q: usize| &b[(j + q) * n..(j + q + 1) * n];
        let v = dot4(x, r(0), r(1), r(2), r(3));
        out[j..j + 4].copy_from_slice(&v);
        j += 4;
    }
    for (jj, o) in out.iter_mut().enumerate().skip(j) {
        *o = dot(x, &b[jj * n..(jj + 1) * n]);
    }
}

/// `c[m,k] += a[m,n] * b[k,n]^T`.
fn gemm_abt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    let mut tmp = vec![0.0; k];
    for i in 0..m {
        dots(&a[i * n..(i + 1) * n], b, n, &mut tmp);
        for (cv, t) in c[i * k..(i + 1) * k].iter_mut().zip(&tmp) {
            *cv += t;
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`. Each `c` element accumulates over `m` in
/// ascending order; four `m` rows are folded per pass over `c`.
fn gemm_atb_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let rows = [&b[i * n..(i + 1) * n], &b[(i + 1) * n..(i + 2) * n], &b[(i + 2) * n..(i + 3) * n], &b[(i + 3) * n..(i + 4) * n]];
        for p in 0..k {
            let av = [a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]];
            if av == [0.0; 4] {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for col in 0..n {
                let mut v = crow[col];
                v += av[0] * rows[0][col];
                v += av[1] * rows[1][col];
                v += av[2] * rows[2][col];
                v += av[3] * rows[3][col];
                crow[col] = v;
            }
        }
        i += 4;
    }
    for i in i..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in c[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

// ---------------------------------------------------------------- linear

#[derive(Debug, Clone)]
pub struct LinearCtx {
    pub x: Tensor,
    pub w: Tensor,
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

fn check_linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if x.ndim() != 2 || w.ndim() != 2 || x.shape()[1] != w.shape()[1] {
        return Err(Error::shape("linear (x vs w)", x.shape(), w.shape()));
    }
    if b.shape() != [w.shape()[0]] {
        return Err(Error::shape("linear (w vs b)", w.shape(), b.shape()));
    }
    Ok((x.shape()[0], x.shape()[1], w.shape()[0]))
}

/// `out[i,j] = sum_k x[i,k] * w[j,k] + b[j]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, fin, fout) = check_linear(x, w, b)?;
    let mut out = vec![0.0; n * fout];
    out.par_chunks_mut(fout)
        .zip(x.data().par_chunks(fin))
        .for_each(|(orow, xrow)| {
            dots(xrow, w.data(), fin, orow);
            for (o, &bv) in orow.iter_mut().zip(b.data()) {
                *o += bv;
            }
        });
    Tensor::new(vec![n, fout], out)
}

pub fn linear_backward(ctx: Option<&LinearCtx>, grad_out: &Tensor) -> Result<LinearGrads> {
    let ctx = ctx.ok_or(Error::MissingContext("linear"))?;
    let (n, fin, fout) = (ctx.x.shape()[0], ctx.x.shape()[1], ctx.w.shape()[0]);
    if grad_out.shape() != [n, fout] {
        return Err(Error::shape("linear_backward", grad_out.shape(), &[n, fout]));
    }
    let mut gx = vec![0.0; n * fin];
    gemm_acc(grad_out.data(), ctx.w.data(), &mut gx, n, fout, fin);
    let mut gw = vec![0.0; fout * fin];
    gemm_atb_acc(grad_out.data(), ctx.x.data(), &mut gw, n, fout, fin);
    let mut gb = vec![0.0; fout];
    for i in 0..n {
        for (b, g) in gb.iter_mut().zip(grad_out.row(i)) {
            *b += g;
        }
    }
    Ok(LinearGrads {
        x: Tensor::new(vec![n, fin], gx)?,
        w: Tensor::new(vec![fout, fin], gw)?,
        b: Tensor::new(vec![fout], gb)?,
    })
}

// ---------------------------------------------------------------- conv2d

/// Square odd kernel, stride 1, "same" zero padding of `k / 2`.
#[derive(Debug, Clone)]
pub struct Conv2dCtx {
    pub x: Tensor,
    pub w: Tensor,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub x: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Copy)]
struct ConvDims {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn hw(&self) -> usize {
        self.h * self.w
    }
}

fn check_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<ConvDims> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || ws[2] % 2 == 0 {
        return Err(Error::shape("conv2d (x vs w)", xs, ws));
    }
    if b.shape() != [ws[0]] {
        return Err(Error::shape("conv2d (w vs b)", ws, b.shape()));
    }
    Ok(ConvDims {
        cin: xs[1],
        cout: ws[0],
        h: xs[2],
        w: xs[3],
        k: ws[2],
    })
}

/// Writes the patches of one sample into columns `off..off + hw` of `cols`,
/// a `[patch, ld]` row-major matrix.
fn im2col(x: &[f64], d: ConvDims, cols: &mut [f64], ld: usize, off: usize) {
    let pad = (d.k / 2) as isize;
    let hw = d.hw();
    for c in 0..d.cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (c * d.k + ky) * d.k + kx;
                let dst = &mut cols[row * ld + off..row * ld + off + hw];
                for oy in 0..d.h {
                    let iy = oy as isize + ky as isize - pad;
                    for ox in 0..d.w {
                        let ix = ox as isize + kx as isize - pad;
                        dst[oy * d.w + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < d.h
                            && (ix as usize) < d.w
                        {
                            plane[iy as usize * d.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns `off..off + hw` back into `x`.
fn col2im(cols: &[f64], d: ConvDims, x: &mut [f64], ld: usize, off: usize) {
    let pad = (d.k / 2) as isize;
    let hw = d.hw();
    for c in 0..d.cin {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (c * d.k + ky) * d.k + kx;
                let src = &cols[row * ld + off..row * ld + off + hw];
                for oy in 0..d.h {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy as usize >= d.h {
                        continue;
                    }
                    for ox in 0..d.w {
                        let ix = ox as isize + kx as isize - pad;
                        if ix < 0 || ix as usize >= d.w {
                            continue;
                        }
                        x[c * hw + iy as usize * d.w + ix as usize] += src[oy * d.w + ox];
                    }
                }
            }
        }
    }
}

/// Each shard of samples is lowered to one `[patch, samples * hw]` matrix
/// so that the GEMM rows stay long even for small feature maps.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = check_conv(x, w, b)?;
    let n = x.shape()[0];
    let (hw, in_len, out_len) = (d.hw(), d.cin * d.hw(), d.cout * d.hw());
    let mut out = vec![0.0; n * out_len];
    out.par_chunks_mut(out_len * SHARD)
        .zip(x.data().par_chunks(in_len * SHARD))
        .for_each(|(o, xs)| {
            let samples = xs.len() / in_len;
            let ld = samples * hw;
            let mut cols = vec![0.0; d.patch() * ld];
            for (j, xj) in xs.chunks(in_len).enumerate() {
                im2col(xj, d, &mut cols, ld, j * hw);
            }
            let mut prod = vec![0.0; d.cout * ld];
            gemm_acc(w.data(), &cols, &mut prod, d.cout, d.patch(), ld);
            for (j, oj) in o.chunks_mut(out_len).enumerate() {
                for (co, plane) in oj.chunks_mut(hw).enumerate() {
                    let bias = b.data()[co];
                    let src = &prod[co * ld + j * hw..co * ld + (j + 1) * hw];
                    for (v, &p) in plane.iter_mut().zip(src) {
                        *v = p + bias;
                    }
                }
            }
        });
    Tensor::new(vec![n, d.cout, d.h, d.w], out)
}

pub fn conv2d_backward(ctx: Option<&Conv2dCtx>, grad_out: &Tensor) -> Result<Conv2dGrads> {
    let ctx = ctx.ok_or(Error::MissingContext("conv2d"))?;
    let b_dummy = Tensor::zeros(&[ctx.w.shape()[0]]);
    let d = check_conv(&ctx.x, &ctx.w, &b_dummy)?;
    let n = ctx.x.shape()[0];
    let expect = [n, d.cout, d.h, d.w];
    if grad_out.shape() != expect {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &expect));
    }
    let (hw, in_len, out_len) = (d.hw(), d.cin * d.hw(), d.cout * d.hw());
    let wlen = d.cout * d.patch();
    let mut gx = vec![0.0; n * in_len];
    let partials: Vec<(Vec<f64>, Vec<f64>)> = gx
        .par_chunks_mut(in_len * SHARD)
        .zip(ctx.x.data().par_chunks(in_len * SHARD))
        .zip(grad_out.data().par_chunks(out_len * SHARD))
        .map(|((gx_shard, x_shard), g_shard)| {
            let samples = x_shard.len() / in_len;
            let ld = samples * hw;
            let mut cols = vec![0.0; d.patch() * ld];
            let mut gmat = vec![0.0; d.cout * ld];
            for (j, (xj, gj)) in x_shard.chunks(in_len).zip(g_shard.chunks(out_len)).enumerate() {
                im2col(xj, d, &mut cols, ld, j * hw);
                for (co, plane) in gj.chunks(hw).enumerate() {
                    gmat[co * ld + j * hw..co * ld + (j + 1) * hw].copy_from_slice(plane);
                }
            }
            let mut gw = vec![0.0; wlen];
            gemm_abt_acc(&gmat, &cols, &mut gw, d.cout, ld, d.patch());
            let gb: Vec<f64> = gmat.chunks(ld).map(|row| row.iter().sum()).collect();
            let mut gcols = vec![0.0; d.patch() * ld];
            gemm_atb_acc(ctx.w.data(), &gmat, &mut gcols, d.cout, d.patch(), ld);
            for (j, gxj) in gx_shard.chunks_mut(in_len).enumerate() {
                col2im(&gcols, d, gxj, ld, j * hw);
            }
            (gw, gb)
        })
        .collect();
    let mut gw = vec![0.0; wlen];
    let mut gb = vec![0.0; d.cout];
    for (pw, pb) in partials {
        gw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
        gb.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
    }
    Ok(Conv2dGrads {
        x: Tensor::new(ctx.x.shape().to_vec(), gx)?,
        w: Tensor::new(ctx.w.shape().to_vec(), gw)?,
        b: Tensor::new(vec![d.cout], gb)?,
    })
}

// ---------------------------------------------------------------- avgpool2d

/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
pub fn avgpool2d_forward(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || s[2] < 2 || s[3] < 2 {
        return Err(Error::shape("avgpool2d", s, &[0, 0, 2, 2]));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for (p, o) in out.chunks_mut(oh * ow).enumerate() {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                o[y * ow + xx] = (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * 0.25;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avgpool2d_backward(input_shape: Option<&[usize]>, grad_out: &Tensor) -> Result<Tensor> {
    let s = input_shape.ok_or(Error::MissingContext("avgpool2d"))?;
    if s.len() != 4 {
        return Err(Error::shape("avgpool2d_backward", s, grad_out.shape()));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::shape("avgpool2d_backward", grad_out.shape(), &[n, c, oh, ow]));
    }
    let mut gx = vec![0.0; n * c * h * w];
    for (p, plane) in gx.chunks_mut(h * w).enumerate() {
        let g = &grad_out.data()[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let v = g[y * ow + xx] * 0.25;
                let i = 2 * y * w + 2 * xx;
                plane[i] += v;
                plane[i + 1] += v;
                plane[i + w] += v;
                plane[i + w + 1] += v;
            }
        }
    }
    Tensor::new(s.to_vec(), gx)
}

// ---------------------------------------------------------------- tnorm

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

/// Per-channel normalization over `[N, C, ...]` where `N` already folds
/// time into batch, so statistics are joint over batch and timesteps.
#[derive(Debug, Clone)]
pub struct TNormCtx {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Batch statistics were used (training) rather than running statistics.
    pub batch_stats: bool,
}

#[derive(Debug, Clone)]
pub struct TNormGrads {
    pub x: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

fn norm_dims(x: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() < 2 || s[1] != channels {
        return Err(Error::shape("tnorm", s, &[0, channels]));
    }
    Ok((s[0], s[2..].iter().product()))
}

/// Normalizes `x`. With `running = Some(..)` and `train = true` batch
/// statistics are used and folded into the running estimate; with
/// `train = false` the running estimate is used as-is.
pub fn tnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &mut RunningStats,
    train: bool,
) -> Result<(Tensor, TNormCtx)> {
    let c = gamma.numel();
    if beta.numel() != c || running.mean.len() != c {
        return Err(Error::shape("tnorm (gamma vs beta)", gamma.shape(), beta.shape()));
    }
    let (n, inner) = norm_dims(x, c)?;
    let count = (n * inner) as f64;
    let plane = |i: usize, ch: usize| (i * c + ch) * inner;

    let (mean, var) = if train {
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for i in 0..n {
                s += x.data()[plane(i, ch)..plane(i, ch) + inner].iter().sum::<f64>();
            }
            let m = s / count;
            let mut v = 0.0;
            for i in 0..n {
                for &xv in &x.data()[plane(i, ch)..plane(i, ch) + inner] {
                    v += (xv - m) * (xv - m);
                }
            }
            mean[ch] = m;
            var[ch] = v / count;
        }
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for ch in 0..c {
            running.mean[ch] = (1.0 - NORM_MOMENTUM) * running.mean[ch] + NORM_MOMENTUM * mean[ch];
            running.var[ch] =
                (1.0 - NORM_MOMENTUM) * running.var[ch] + NORM_MOMENTUM * var[ch] * unbias;
        }
        (mean, var)
    } else {
        (running.mean.clone(), running.var.clone())
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.numel()];
    let mut out = vec![0.0; x.numel()];
    for i in 0..n {
        for ch in 0..c {
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            let r = plane(i, ch)..plane(i, ch) + inner;
            for ((xh, o), &xv) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&x.data()[r]) {
                *xh = (xv - mean[ch]) * inv_std[ch];
                *o = g * *xh + b;
            }
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        TNormCtx {
            xhat: Tensor::new(shape, xhat)?,
            inv_std,
            gamma: gamma.data().to_vec(),
            batch_stats: train,
        },
    ))
}

pub fn tnorm_backward(ctx: Option<&TNormCtx>, grad_out: &Tensor) -> Result<TNormGrads> {
    let ctx = ctx.ok_or(Error::MissingContext("tnorm"))?;
    ctx.xhat.same_shape(grad_out, "tnorm_backward")?;
    let c = ctx.gamma.len();
    let (n, inner) = norm_dims(grad_out, c)?;
    let count = (n * inner) as f64;
    let plane = |i: usize, ch: usize| (i * c + ch) * inner;
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let r = plane(i, ch)..plane(i, ch) + inner;
            for (&g, &xh) in grad_out.data()[r.clone()].iter().zip(&ctx.xhat.data()[r]) {
                ggamma[ch] += g * xh;
                gbeta[ch] += g;
            }
        }
    }
    let mut gx = vec![0.0; grad_out.numel()];
    for i in 0..n {
        for ch in 0..c {
            let r = plane(i, ch)..plane(i, ch) + inner;
            let k = ctx.gamma[ch] * ctx.inv_std[ch];
            for ((o, &g), &xh) in gx[r.clone()]
                .iter_mut()
                .zip(&grad_out.data()[r.clone()])
                .zip(&ctx.xhat.data()[r])
            {
                *o = if ctx.batch_stats {
                    k * (g - gbeta[ch] / count - xh * ggamma[ch] / count)
                } else {
                    k * g
                };
            }
        }
    }
    Ok(TNormGrads {
        x: Tensor::new(grad_out.shape().to_vec(), gx)?,
        gamma: Tensor::new(vec![c], ggamma)?,
        beta: Tensor::new(vec![c], gbeta)?,
    })
}
