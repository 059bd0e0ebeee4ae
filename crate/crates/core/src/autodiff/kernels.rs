//! Forward and backward kernels for the operator set. Shared by the eager
//! (inference) executor and the recording tape.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape4, Tensor4};

/// Logits are clamped to this magnitude before exponentiation.
pub const SIGMOID_CLAMP: f64 = 30.0;
/// Probability clamp applied to `p_t` inside the focal loss.
pub const FOCAL_PT_CLAMP: f64 = 1e-7;

fn mismatch(op: &'static str, left: Shape4, right: Shape4) -> Error {
    Error::ShapeMismatch { op, left, right }
}

fn check_vector<T: Real>(op: &'static str, v: &Tensor4<T>, len: usize) -> Result<()> {
    if v.numel() != len {
        return Err(Error::invalid(
            op,
            format!("expected {len} per-channel values, got tensor {}", v.shape()),
        ));
    }
    Ok(())
}

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Geometry of one 2-D convolution, validated once and reused by forward and
/// backward.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(x: Shape4, weight: Shape4, stride: usize, pad: usize) -> Result<Self> {
        if weight.h != weight.w {
            return Err(Error::invalid("conv2d", format!("kernel {weight} is not square")));
        }
        if weight.c != x.c {
            return Err(mismatch("conv2d", x, weight));
        }
        let k = weight.h;
        let (h_out, w_out) = match (
            conv_out_dim(x.h, k, stride, pad),
            conv_out_dim(x.w, k, stride, pad),
        ) {
            (Some(h), Some(w)) => (h, w),
            _ => return Err(mismatch("conv2d", x, weight)),
        };
        Ok(ConvGeometry {
            c_in: x.c,
            c_out: weight.n,
            k,
            stride,
            pad,
            h: x.h,
            w: x.w,
            h_out,
            w_out,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn im2col<T: Real>(g: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    let mut row = 0;
    for ci in 0..g.c_in {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // valid ox satisfy 0 <= ox + kx - pad < w
                        let lo = g.pad.saturating_sub(kx).min(g.w_out);
                        let hi = (g.w + g.pad).saturating_sub(kx).min(g.w_out).max(lo);
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if hi > lo {
                            let start = lo + kx - g.pad;
                            line[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                        }
                    } else {
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *v = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    let mut row = 0;
    for ci in 0..g.c_in {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Zero-padded 2-D cross-correlation. `weight` is `(c_out, c_in, k, k)` and
/// `bias`, when present, holds `c_out` values.
pub fn conv2d<T: Real>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&Tensor4<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor4<T>> {
    let g = ConvGeometry::new(x.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        check_vector("conv2d bias", b, g.c_out)?;
    }
    let n = x.shape().n;
    let plane = g.out_plane();
    let mut y = Tensor4::zeros(Shape4::new(n, g.c_out, g.h_out, g.w_out));
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch_len() * plane]
    };
    for s in 0..n {
        let xs = x.sample(s);
        let ys = y.sample_mut(s);
        if let Some(b) = bias {
            for (co, chunk) in ys.chunks_mut(plane).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let rhs: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(&g, xs, &mut cols);
            &cols
        };
        T::gemm(g.c_out, g.patch_len(), plane, weight.data(), false, rhs, false, ys, beta);
    }
    Ok(y)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    dy: &Tensor4<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor4<T>, Tensor4<T>, Tensor4<T>)> {
    let g = ConvGeometry::new(x.shape(), weight.shape(), stride, pad)?;
    let n = x.shape().n;
    let expected = Shape4::new(n, g.c_out, g.h_out, g.w_out);
    if dy.shape() != expected {
        return Err(mismatch("conv2d backward", expected, dy.shape()));
    }
    let plane = g.out_plane();
    let patch = g.patch_len();
    let mut dx = Tensor4::zeros(x.shape());
    let mut dw = Tensor4::zeros(weight.shape());
    let mut db = Tensor4::zeros(Shape4::new(1, g.c_out, 1, 1));
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { patch * plane }];
    let mut dcols = vec![T::zero(); patch * plane];
    for s in 0..n {
        let xs = x.sample(s);
        let dys = dy.sample(s);
        for (co, chunk) in dys.chunks(plane).enumerate() {
            db.data_mut()[co] += chunk.iter().copied().sum::<T>();
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(&g, xs, &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        T::gemm(g.c_out, plane, patch, dys, false, cols_ref, true, dw.data_mut(), T::one());
        // dcols = Wᵀ · dY
        if g.is_pointwise() {
            T::gemm(patch, g.c_out, plane, weight.data(), true, dys, false, dx.sample_mut(s), T::zero());
        } else {
            T::gemm(patch, g.c_out, plane, weight.data(), true, dys, false, &mut dcols, T::zero());
            col2im_add(&g, &dcols, dx.sample_mut(s));
        }
    }
    Ok((dx, dw, db))
}

fn check_transposed<T: Real>(x: &Tensor4<T>, weight: &Tensor4<T>) -> Result<()> {
    let ws = weight.shape();
    if ws.n != x.shape().c || ws.h != 2 || ws.w != 2 {
        return Err(mismatch("transposed_conv2d", x.shape(), ws));
    }
    Ok(())
}

/// Stride-2, 2x2 transposed convolution. `weight` is `(c_in, c_out, 2, 2)`;
/// output spatial extents are exactly double the input's.
pub fn conv_transpose2x2<T: Real>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&Tensor4<T>>,
) -> Result<Tensor4<T>> {
    check_transposed(x, weight)?;
    let xs = x.shape();
    let c_out = weight.shape().c;
    if let Some(b) = bias {
        check_vector("transposed_conv2d bias", b, c_out)?;
    }
    let plane = xs.plane();
    let mut y = Tensor4::zeros(Shape4::new(xs.n, c_out, xs.h * 2, xs.w * 2));
    let mut tmp = vec![T::zero(); c_out * 4 * plane];
    let (ow, oplane) = (xs.w * 2, plane * 4);
    for s in 0..xs.n {
        T::gemm(c_out * 4, xs.c, plane, weight.data(), true, x.sample(s), false, &mut tmp, T::zero());
        let ys = y.sample_mut(s);
        for co in 0..c_out {
            let b = bias.map_or(T::zero(), |b| b.data()[co]);
            for tap in 0..4 {
                let (a, bx) = (tap / 2, tap % 2);
                let src = &tmp[(co * 4 + tap) * plane..(co * 4 + tap + 1) * plane];
                for i in 0..xs.h {
                    let row = co * oplane + (2 * i + a) * ow;
                    for j in 0..xs.w {
                        ys[row + 2 * j + bx] = src[i * xs.w + j] + b;
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn conv_transpose2x2_backward<T: Real>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Tensor4<T>)> {
    check_transposed(x, weight)?;
    let xs = x.shape();
    let c_out = weight.shape().c;
    let expected = Shape4::new(xs.n, c_out, xs.h * 2, xs.w * 2);
    if dy.shape() != expected {
        return Err(mismatch("transposed_conv2d backward", expected, dy.shape()));
    }
    let plane = xs.plane();
    let (ow, oplane) = (xs.w * 2, plane * 4);
    let mut dx = Tensor4::zeros(xs);
    let mut dw = Tensor4::zeros(weight.shape());
    let mut db = Tensor4::zeros(Shape4::new(1, c_out, 1, 1));
    let mut gathered = vec![T::zero(); c_out * 4 * plane];
    for s in 0..xs.n {
        let dys = dy.sample(s);
        for co in 0..c_out {
            db.data_mut()[co] += dys[co * oplane..(co + 1) * oplane].iter().copied().sum::<T>();
            for tap in 0..4 {
                let (a, bx) = (tap / 2, tap % 2);
                let dst = &mut gathered[(co * 4 + tap) * plane..(co * 4 + tap + 1) * plane];
                for i in 0..xs.h {
                    let row = co * oplane + (2 * i + a) * ow;
                    for j in 0..xs.w {
                        dst[i * xs.w + j] = dys[row + 2 * j + bx];
                    }
                }
            }
        }
        T::gemm(xs.c, c_out * 4, plane, weight.data(), false, &gathered, false, dx.sample_mut(s), T::zero());
        T::gemm(xs.c, plane, c_out * 4, x.sample(s), false, &gathered, true, dw.data_mut(), T::one());
    }
    Ok((dx, dw, db))
}

/// 2x2 max-pool, stride 2. Returns the pooled tensor and, per output element,
/// the flat input offset of the selected maximum. Ties resolve to the first
/// element of the window in row-major order.
pub fn max_pool2x2<T: Real>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::invalid(
            "maxpool2x2",
            format!("spatial extents of {s} must be even"),
        ));
    }
    let out = Shape4::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut y = Tensor4::zeros(out);
    let mut argmax = vec![0usize; out.numel()];
    let data = x.data();
    let mut o = 0;
    for plane in 0..s.n * s.c {
        let base = plane * s.h * s.w;
        for i in 0..out.h {
            for j in 0..out.w {
                let mut best = base + 2 * i * s.w + 2 * j;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + dy) * s.w + 2 * j + dx;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                y.data_mut()[o] = data[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    Ok((y, argmax))
}

pub fn max_pool2x2_backward<T: Real>(input: Shape4, argmax: &[usize], dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(input);
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[idx] += g;
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let ow = s.w * 2;
    let mut y = Tensor4::zeros(Shape4::new(s.n, s.c, s.h * 2, ow));
    let yd = y.data_mut();
    for (plane, src) in x.data().chunks(s.plane()).enumerate() {
        let base = plane * s.plane() * 4;
        for i in 0..s.h {
            for j in 0..s.w {
                let v = src[i * s.w + j];
                let r0 = base + 2 * i * ow + 2 * j;
                yd[r0] = v;
                yd[r0 + 1] = v;
                yd[r0 + ow] = v;
                yd[r0 + ow + 1] = v;
            }
        }
    }
    y
}

pub fn upsample2x_backward<T: Real>(input: Shape4, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(input);
    let ow = input.w * 2;
    let g = dy.data();
    for (plane, dst) in dx.data_mut().chunks_mut(input.plane()).enumerate() {
        let base = plane * input.plane() * 4;
        for i in 0..input.h {
            for j in 0..input.w {
                let r0 = base + 2 * i * ow + 2 * j;
                dst[i * input.w + j] = g[r0] + g[r0 + 1] + g[r0 + ow] + g[r0 + ow + 1];
            }
        }
    }
    dx
}

/// Per-(sample, group) statistics saved by the group-norm forward pass.
#[derive(Clone, Debug)]
pub struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

fn check_group_norm<T: Real>(x: &Tensor4<T>, groups: usize, gamma: &Tensor4<T>, beta: &Tensor4<T>) -> Result<()> {
    let c = x.shape().c;
    if groups == 0 || c % groups != 0 {
        return Err(Error::invalid(
            "group_norm",
            format!("{c} channels are not divisible into {groups} groups"),
        ));
    }
    check_vector("group_norm gamma", gamma, c)?;
    check_vector("group_norm beta", beta, c)
}

pub fn group_norm<T: Real>(
    x: &Tensor4<T>,
    groups: usize,
    gamma: &Tensor4<T>,
    beta: &Tensor4<T>,
    eps: f64,
) -> Result<(Tensor4<T>, GroupStats<T>)> {
    check_group_norm(x, groups, gamma, beta)?;
    if !(eps > 0.0) {
        return Err(Error::invalid("group_norm", "eps must be positive"));
    }
    let s = x.shape();
    let cg = s.c / groups;
    let len = cg * s.plane();
    let count = T::of(len as f64);
    let mut y = Tensor4::zeros(s);
    let mut stats = GroupStats {
        mean: Vec::with_capacity(s.n * groups),
        rstd: Vec::with_capacity(s.n * groups),
    };
    for (chunk_idx, (src, dst)) in x.data().chunks(len).zip(y.data_mut().chunks_mut(len)).enumerate() {
        let mean = src.iter().copied().sum::<T>() / count;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let rstd = T::one() / (var + T::of(eps)).sqrt();
        let g = chunk_idx % groups;
        for (cl, (sp, dp)) in src.chunks(s.plane()).zip(dst.chunks_mut(s.plane())).enumerate() {
            let ch = g * cg + cl;
            let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
            for (o, &v) in dp.iter_mut().zip(sp) {
                *o = ga * (v - mean) * rstd + be;
            }
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((y, stats))
}

pub fn group_norm_backward<T: Real>(
    x: &Tensor4<T>,
    groups: usize,
    gamma: &Tensor4<T>,
    stats: &GroupStats<T>,
    dy: &Tensor4<T>,
) -> (Tensor4<T>, Tensor4<T>, Tensor4<T>) {
    let s = x.shape();
    let cg = s.c / groups;
    let plane = s.plane();
    let len = cg * plane;
    let count = T::of(len as f64);
    let mut dx = Tensor4::zeros(s);
    let mut dgamma = Tensor4::zeros(Shape4::new(1, s.c, 1, 1));
    let mut dbeta = Tensor4::zeros(Shape4::new(1, s.c, 1, 1));
    for (k, ((xs, gs), dxs)) in x
        .data()
        .chunks(len)
        .zip(dy.data().chunks(len))
        .zip(dx.data_mut().chunks_mut(len))
        .enumerate()
    {
        let (mean, rstd) = (stats.mean[k], stats.rstd[k]);
        let g = k % groups;
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for cl in 0..cg {
            let ch = g * cg + cl;
            let ga = gamma.data()[ch];
            let mut dga = T::zero();
            let mut dbe = T::zero();
            for i in cl * plane..(cl + 1) * plane {
                let xhat = (xs[i] - mean) * rstd;
                dga += gs[i] * xhat;
                dbe += gs[i];
                let dxhat = gs[i] * ga;
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
            dgamma.data_mut()[ch] += dga;
            dbeta.data_mut()[ch] += dbe;
        }
        let m1 = sum_dxhat / count;
        let m2 = sum_dxhat_xhat / count;
        for cl in 0..cg {
            let ga = gamma.data()[g * cg + cl];
            for i in cl * plane..(cl + 1) * plane {
                let xhat = (xs[i] - mean) * rstd;
                dxs[i] = rstd * (gs[i] * ga - m1 - xhat * m2);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_in_place<T: Real>(x: &mut Tensor4<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

pub fn relu_backward<T: Real>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (g, &o) in dx.data_mut().iter_mut().zip(y.data()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

#[inline]
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    let c = T::of(SIGMOID_CLAMP);
    // NaN must propagate so the training loop can report it
    let v = if v > c {
        c
    } else if v < -c {
        -c
    } else {
        v
    };
    T::one() / (T::one() + (-v).exp())
}

pub fn sigmoid_in_place<T: Real>(x: &mut Tensor4<T>) {
    for v in x.data_mut() {
        *v = sigmoid_scalar(*v);
    }
}

pub fn sigmoid_backward<T: Real>(x: &Tensor4<T>, y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let c = T::of(SIGMOID_CLAMP);
    let mut dx = dy.clone();
    for ((g, &o), &i) in dx.data_mut().iter_mut().zip(y.data()).zip(x.data()) {
        *g = if i.abs() > c { T::zero() } else { *g * o * (T::one() - o) };
    }
    dx
}

pub fn add<T: Real>(mut a: Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.shape() != b.shape() {
        return Err(mismatch("add", a.shape(), b.shape()));
    }
    a.add_assign(b)?;
    Ok(a)
}

pub fn mul<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.shape() != b.shape() {
        return Err(mismatch("mul", a.shape(), b.shape()));
    }
    let mut y = a.clone();
    for (o, &v) in y.data_mut().iter_mut().zip(b.data()) {
        *o *= v;
    }
    Ok(y)
}

/// Channel-wise concatenation `[a, b]`.
pub fn concat<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(mismatch("concat", sa, sb));
    }
    let mut out = Vec::with_capacity(sa.numel() + sb.numel());
    for s in 0..sa.n {
        out.extend_from_slice(a.sample(s));
        out.extend_from_slice(b.sample(s));
    }
    Tensor4::from_vec(Shape4::new(sa.n, sa.c + sb.c, sa.h, sa.w), out)
}

pub fn concat_backward<T: Real>(ca: usize, dy: &Tensor4<T>) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let s = dy.shape();
    let la = ca * s.plane();
    let mut da = Vec::with_capacity(s.n * la);
    let mut db = Vec::with_capacity(s.numel() - s.n * la);
    for n in 0..s.n {
        let src = dy.sample(n);
        da.extend_from_slice(&src[..la]);
        db.extend_from_slice(&src[la..]);
    }
    Ok((
        Tensor4::from_vec(Shape4::new(s.n, ca, s.h, s.w), da)?,
        Tensor4::from_vec(Shape4::new(s.n, s.c - ca, s.h, s.w), db)?,
    ))
}

/// Global average pooling to `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let count = T::of(s.plane() as f64);
    let data = x
        .data()
        .chunks(s.plane())
        .map(|p| p.iter().copied().sum::<T>() / count)
        .collect();
    Tensor4::from_vec(Shape4::new(s.n, s.c, 1, 1), data).expect("pooled shape")
}

pub fn global_avg_pool_backward<T: Real>(input: Shape4, dy: &Tensor4<T>) -> Tensor4<T> {
    let count = T::of(input.plane() as f64);
    let mut dx = Tensor4::zeros(input);
    for (dst, &g) in dx.data_mut().chunks_mut(input.plane()).zip(dy.data()) {
        dst.fill(g / count);
    }
    dx
}

/// Multiplies each `(n, c)` plane of `x` by `scale[n, c]`.
pub fn scale_channels<T: Real>(x: &Tensor4<T>, scale: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = x.shape();
    if scale.shape() != Shape4::new(s.n, s.c, 1, 1) {
        return Err(mismatch("scale_channels", s, scale.shape()));
    }
    let mut y = x.clone();
    for (dst, &f) in y.data_mut().chunks_mut(s.plane()).zip(scale.data()) {
        dst.iter_mut().for_each(|v| *v *= f);
    }
    Ok(y)
}

pub fn scale_channels_backward<T: Real>(
    x: &Tensor4<T>,
    scale: &Tensor4<T>,
    dy: &Tensor4<T>,
) -> (Tensor4<T>, Tensor4<T>) {
    let s = x.shape();
    let mut dx = dy.clone();
    let mut ds = Tensor4::zeros(scale.shape());
    for (k, ((dxp, xp), &f)) in dx
        .data_mut()
        .chunks_mut(s.plane())
        .zip(x.data().chunks(s.plane()))
        .zip(scale.data())
        .enumerate()
    {
        let mut acc = T::zero();
        for (g, &v) in dxp.iter_mut().zip(xp) {
            acc += *g * v;
            *g *= f;
        }
        ds.data_mut()[k] = acc;
    }
    (dx, ds)
}

fn check_pair<T: Real>(op: &'static str, a: &Tensor4<T>, b: &Tensor4<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Soft Dice loss over every element of the batch jointly:
/// `1 - (2·Σ p·g + eps) / (Σ p + Σ g + eps)`.
pub fn dice_loss<T: Real>(probs: &Tensor4<T>, target: &Tensor4<T>, eps: f64) -> Result<T> {
    check_pair("dice_loss", probs, target)?;
    let (inter, total) = dice_sums(probs, target);
    let eps = T::of(eps);
    Ok(T::one() - (T::of(2.0) * inter + eps) / (total + eps))
}

fn dice_sums<T: Real>(probs: &Tensor4<T>, target: &Tensor4<T>) -> (T, T) {
    let mut inter = T::zero();
    let mut total = T::zero();
    for (&p, &g) in probs.data().iter().zip(target.data()) {
        inter += p * g;
        total += p + g;
    }
    (inter, total)
}

pub fn dice_loss_grad<T: Real>(probs: &Tensor4<T>, target: &Tensor4<T>, eps: f64) -> Result<Tensor4<T>> {
    check_pair("dice_loss", probs, target)?;
    let (inter, total) = dice_sums(probs, target);
    let eps = T::of(eps);
    let two = T::of(2.0);
    let num = two * inter + eps;
    let den = total + eps;
    let den2 = den * den;
    let mut g = Tensor4::zeros(probs.shape());
    for (o, &t) in g.data_mut().iter_mut().zip(target.data()) {
        *o = -(two * t * den - num) / den2;
    }
    Ok(g)
}

/// Focal loss settings. With `class_balanced` off, `alpha` weights both
/// classes; with it on, foreground pixels get `alpha` and background pixels
/// `1 - alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
    pub class_balanced: bool,
}

impl FocalParams {
    fn alpha_for(&self, target: f64) -> f64 {
        if self.class_balanced && target < 0.5 {
            1.0 - self.alpha
        } else {
            self.alpha
        }
    }
}

/// Mean over elements of `-alpha · (1 - p_t)^gamma · ln(p_t)`.
pub fn focal_loss<T: Real>(probs: &Tensor4<T>, target: &Tensor4<T>, params: FocalParams) -> Result<T> {
    check_pair("focal_loss", probs, target)?;
    let mut acc = 0.0f64;
    for (&p, &g) in probs.data().iter().zip(target.data()) {
        let (p, g) = (p.as_f64(), g.as_f64());
        let pt = (if g >= 0.5 { p } else { 1.0 - p }).clamp(FOCAL_PT_CLAMP, 1.0 - FOCAL_PT_CLAMP);
        acc += -params.alpha_for(g) * (1.0 - pt).powf(params.gamma) * pt.ln();
    }
    Ok(T::of(acc / probs.numel() as f64))
}

pub fn focal_loss_grad<T: Real>(probs: &Tensor4<T>, target: &Tensor4<T>, params: FocalParams) -> Result<Tensor4<T>> {
    check_pair("focal_loss", probs, target)?;
    let inv_n = 1.0 / probs.numel() as f64;
    let mut out = Tensor4::zeros(probs.shape());
    for ((o, &p), &g) in out.data_mut().iter_mut().zip(probs.data()).zip(target.data()) {
        let (p, g) = (p.as_f64(), g.as_f64());
        let positive = g >= 0.5;
        let raw = if positive { p } else { 1.0 - p };
        if !(FOCAL_PT_CLAMP..=1.0 - FOCAL_PT_CLAMP).contains(&raw) {
            continue;
        }
        let pt = raw;
        let a = params.alpha_for(g);
        let gm = params.gamma;
        let q = 1.0 - pt;
        // d/dpt of -a q^gm ln(pt)
        let mod_grad = if gm == 0.0 { 0.0 } else { gm * q.powf(gm - 1.0) * pt.ln() };
        let dpt = a * (mod_grad - q.powf(gm) / pt);
        let dp = if positive { dpt } else { -dpt };
        *o = T::of(dp * inv_n);
    }
    Ok(out)
}

pub fn mse_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
    check_pair("mse_loss", pred, target)?;
    let acc: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(T::of(acc / pred.numel() as f64))
}

pub fn mse_loss_grad<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_pair("mse_loss", pred, target)?;
    let k = T::of(2.0 / pred.numel() as f64);
    let mut g = pred.clone();
    for (o, &t) in g.data_mut().iter_mut().zip(target.data()) {
        *o = (*o - t) * k;
    }
    Ok(g)
}
