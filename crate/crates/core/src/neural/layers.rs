//! Channel-major tensors and the layer primitives of the detector, each
//! with a hand-written backward pass.

use super::real::Real;
use super::sigmoid;

/// `c × h × w` tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f64> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn same_shape<U>(&self, other: &Tensor<U>) -> bool {
        (self.c, self.h, self.w) == (other.c, other.h, other.w)
    }

    pub fn at(&self, ch: usize, y: usize, x: usize) -> T {
        self.data[(ch * self.h + y) * self.w + x]
    }

    pub fn plane(&self, ch: usize) -> &[T] {
        let n = self.hw();
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut [T] {
        let n = self.hw();
        &mut self.data[ch * n..(ch + 1) * n]
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        debug_assert!(self.same_shape(other));
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor<T>) -> T {
        let mut acc = T::zero();
        for (&a, &b) in self.data.iter().zip(&other.data) {
            acc += a * b;
        }
        acc
    }

    /// Elementwise conversion to another scalar type.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|v| U::from_f64(v.to_f64()))
    }
}

/// Geometry of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
        }
    }

    /// 1×1 convolution, i.e. a per-position linear map.
    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        Self::new(in_ch, out_ch, 1, 1, 0)
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        vec![self.out_ch, self.in_ch, self.k, self.k]
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.k * self.k
    }
}

/// Output indices `o < n_out` with `0 ≤ o·stride + off − pad < n_in`.
fn span(off: usize, pad: usize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let lo = if pad > off { (pad - off).div_ceil(stride) } else { 0 };
    let top = n_in + pad;
    if top <= off {
        return (0, 0);
    }
    let hi = ((top - 1 - off) / stride + 1).min(n_out);
    (lo.min(hi), hi)
}

/// Unrolled input patches: row `(ic·k + ky)·k + kx`, column `oy·wo + ox`,
/// zero where the kernel overlaps the padding.
fn im2col<T: Real>(x: &Tensor<T>, s: ConvSpec, ho: usize, wo: usize) -> Vec<T> {
    let k = s.k;
    let hw = ho * wo;
    let mut cols = vec![T::zero(); s.in_ch * k * k * hw];
    for ic in 0..s.in_ch {
        let xi = x.plane(ic);
        for ky in 0..k {
            let (oy0, oy1) = span(ky, s.pad, s.stride, x.h, ho);
            for kx in 0..k {
                let (ox0, ox1) = span(kx, s.pad, s.stride, x.w, wo);
                let row = &mut cols[((ic * k + ky) * k + kx) * hw..][..hw];
                for oy in oy0..oy1 {
                    let xrow = &xi[(oy * s.stride + ky - s.pad) * x.w..][..x.w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    for ox in ox0..ox1 {
                        dst[ox] = xrow[ox * s.stride + kx - s.pad];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto the input.
fn col2im(cols: &[f64], s: ConvSpec, h: usize, w: usize, ho: usize, wo: usize) -> Tensor {
    let k = s.k;
    let hw = ho * wo;
    let mut dx = Tensor::zeros(s.in_ch, h, w);
    for ic in 0..s.in_ch {
        let dxi = dx.plane_mut(ic);
        for ky in 0..k {
            let (oy0, oy1) = span(ky, s.pad, s.stride, h, ho);
            for kx in 0..k {
                let (ox0, ox1) = span(kx, s.pad, s.stride, w, wo);
                let row = &cols[((ic * k + ky) * k + kx) * hw..][..hw];
                for oy in oy0..oy1 {
                    let base = (oy * s.stride + ky - s.pad) * w;
                    for ox in ox0..ox1 {
                        dxi[base + ox * s.stride + kx - s.pad] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
    dx
}

pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], s: ConvSpec) -> Tensor<T> {
    assert_eq!(x.c, s.in_ch, "conv input channels");
    assert_eq!(weight.len(), s.weight_len(), "conv weight length");
    let (ho, wo) = s.out_dims(x.h, x.w);
    let hw = ho * wo;
    let cols = im2col(x, s, ho, wo);
    let j = s.in_ch * s.k * s.k;
    let mut y = Tensor::zeros(s.out_ch, ho, wo);
    for oc in 0..s.out_ch {
        y.plane_mut(oc).fill(bias[oc]);
    }
    T::gemm(s.out_ch, j, hw, weight, (j, 1), &cols, (hw, 1), &mut y.data, true);
    y
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv2d_backward(x: &Tensor, weight: &[f64], s: ConvSpec, dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (ho, wo) = (dy.h, dy.w);
    let hw = ho * wo;
    let cols = im2col(x, s, ho, wo);
    let j = s.in_ch * s.k * s.k;
    let db: Vec<f64> = (0..s.out_ch).map(|oc| dy.plane(oc).iter().sum()).collect();
    let mut dw = vec![0.0; s.weight_len()];
    f64::gemm(s.out_ch, hw, j, &dy.data, (hw, 1), &cols, (1, hw), &mut dw, false);
    let mut dcols = vec![0.0; cols.len()];
    f64::gemm(j, s.out_ch, hw, weight, (1, j), &dy.data, (hw, 1), &mut dcols, false);
    (col2im(&dcols, s, x.h, x.w, ho, wo), dw, db)
}

pub const NORM_EPS: f64 = 1e-5;

/// Normalized activations and inverse standard deviations of a norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCache<T = f64> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn mean<T: Real>(it: impl Iterator<Item = T>, n: usize) -> T {
    let mut acc = T::zero();
    it.for_each(|v| acc += v);
    acc / T::from_f64(n as f64)
}

/// Per-channel normalization over the spatial plane, without affine terms.
pub fn instance_norm<T: Real>(x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
    let n = x.hw();
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.c);
    for ch in 0..x.c {
        let p = xhat.plane_mut(ch);
        let mu = mean(p.iter().copied(), n);
        let var = mean(p.iter().map(|&v| (v - mu) * (v - mu)), n);
        let is = T::one() / (var + T::from_f64(NORM_EPS)).sqrt();
        p.iter_mut().for_each(|v| *v = (*v - mu) * is);
        inv_std.push(is);
    }
    (xhat.clone(), NormCache { xhat, inv_std })
}

pub fn instance_norm_backward(cache: &NormCache, dy: &Tensor) -> Tensor {
    let n = dy.hw() as f64;
    let mut dx = dy.clone();
    for ch in 0..dy.c {
        let xh = cache.xhat.plane(ch);
        let g = dy.plane(ch);
        let mg = g.iter().sum::<f64>() / n;
        let mgx = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        let is = cache.inv_std[ch];
        let p = dx.plane_mut(ch);
        for ((d, &gv), &xv) in p.iter_mut().zip(g).zip(xh) {
            *d = is * (gv - mg - xv * mgx);
        }
        // The exact gradient sums to zero over the plane; remove the
        // rounding residue so upstream biases see a clean zero.
        let m = p.iter().sum::<f64>() / n;
        p.iter_mut().for_each(|d| *d -= m);
    }
    dx
}

/// Per-position normalization across channels with scale and shift.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> (Tensor<T>, NormCache<T>) {
    let (c, hw) = (x.c, x.hw());
    let mut xhat = Tensor::zeros(c, x.h, x.w);
    let mut y = Tensor::zeros(c, x.h, x.w);
    let mut inv_std = Vec::with_capacity(hw);
    for p in 0..hw {
        let mu = mean((0..c).map(|ch| x.data[ch * hw + p]), c);
        let var = mean((0..c).map(|ch| (x.data[ch * hw + p] - mu) * (x.data[ch * hw + p] - mu)), c);
        let is = T::one() / (var + T::from_f64(NORM_EPS)).sqrt();
        for ch in 0..c {
            let xh = (x.data[ch * hw + p] - mu) * is;
            xhat.data[ch * hw + p] = xh;
            y.data[ch * hw + p] = gamma[ch] * xh + beta[ch];
        }
        inv_std.push(is);
    }
    (y, NormCache { xhat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(cache: &NormCache, gamma: &[f64], dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (c, hw) = (dy.c, dy.hw());
    let xh = &cache.xhat.data;
    let mut dx = Tensor::zeros(c, dy.h, dy.w);
    let mut dg = vec![0.0; c];
    let mut dbt = vec![0.0; c];
    for ch in 0..c {
        for p in 0..hw {
            let i = ch * hw + p;
            dg[ch] += dy.data[i] * xh[i];
            dbt[ch] += dy.data[i];
        }
    }
    for p in 0..hw {
        let mut m = 0.0;
        let mut mx = 0.0;
        for ch in 0..c {
            let i = ch * hw + p;
            let g = dy.data[i] * gamma[ch];
            m += g;
            mx += g * xh[i];
        }
        m /= c as f64;
        mx /= c as f64;
        let is = cache.inv_std[p];
        for ch in 0..c {
            let i = ch * hw + p;
            let g = dy.data[i] * gamma[ch];
            dx.data[i] = is * (g - m - xh[i] * mx);
        }
    }
    (dx, dg, dbt)
}

pub fn silu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(super::silu)
}

/// Gradient through SiLU given its pre-activation input.
pub fn silu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&x.data) {
        let s = sigmoid(v);
        *d *= s * (1.0 + v * (1.0 - s));
    }
    dx
}

/// Stride-1 max pooling with `k / 2` padding; returns the pooled tensor
/// and the flat source index of every output element.
pub fn max_pool<T: Real>(x: &Tensor<T>, k: usize) -> (Tensor<T>, Vec<usize>) {
    let r = (k / 2) as isize;
    let (h, w) = (x.h as isize, x.w as isize);
    let mut y = Tensor::zeros(x.c, x.h, x.w);
    let mut arg = vec![0usize; x.data.len()];
    for ch in 0..x.c {
        let base = ch * x.hw();
        let p = x.plane(ch);
        for yy in 0..h {
            for xx in 0..w {
                let mut best = T::from_f64(f64::NEG_INFINITY);
                let mut bi = 0;
                for dy in -r..=r {
                    let iy = yy + dy;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for dx in -r..=r {
                        let ix = xx + dx;
                        if ix < 0 || ix >= w {
                            continue;
                        }
                        let idx = (iy * w + ix) as usize;
                        // Strict comparison keeps the first maximum in raster order.
                        if p[idx] > best {
                            best = p[idx];
                            bi = idx;
                        }
                    }
                }
                let o = (yy * w + xx) as usize;
                y.data[base + o] = best;
                arg[base + o] = base + bi;
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward(arg: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(dy.c, dy.h, dy.w);
    for (o, &src) in arg.iter().enumerate() {
        dx.data[src] += dy.data[o];
    }
    dx
}

/// Cyclic shift of every plane: `out[y][x] = in[(y − sy) mod h][(x − sx) mod w]`.
pub fn roll<T: Real>(x: &Tensor<T>, sy: isize, sx: isize) -> Tensor<T> {
    let (h, w) = (x.h as isize, x.w as isize);
    let mut y = Tensor::zeros(x.c, x.h, x.w);
    for ch in 0..x.c {
        let src = x.plane(ch);
        let dst = y.plane_mut(ch);
        for yy in 0..h {
            let iy = (yy - sy).rem_euclid(h);
            for xx in 0..w {
                let ix = (xx - sx).rem_euclid(w);
                dst[(yy * w + xx) as usize] = src[(iy * w + ix) as usize];
            }
        }
    }
    y
}

/// Channel concatenation.
pub fn concat<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let (h, w) = (parts[0].h, parts[0].w);
    let c = parts.iter().map(|t| t.c).sum();
    let mut data = Vec::with_capacity(c * h * w);
    for t in parts {
        debug_assert_eq!((t.h, t.w), (h, w));
        data.extend_from_slice(&t.data);
    }
    Tensor::from_vec(c, h, w, data)
}

/// Inverse of [`concat`] on a gradient: split into chunks of `sizes` channels.
pub fn split(t: &Tensor, sizes: &[usize]) -> Vec<Tensor> {
    let hw = t.hw();
    let mut off = 0;
    sizes
        .iter()
        .map(|&c| {
            let part = Tensor::from_vec(c, t.h, t.w, t.data[off * hw..(off + c) * hw].to_vec());
            off += c;
            part
        })
        .collect()
}

/// Softmax attention weights of every window and head, row-major
/// `[window][head][query][key]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnCache<T = f64> {
    pub weights: Vec<T>,
    pub window: usize,
    pub heads: usize,
}

impl<T> AttnCache<T> {
    pub fn tokens(&self) -> usize {
        self.window * self.window
    }
}

/// Flat plane indices of the tokens of window `wi` in raster order.
fn window_positions(w: usize, ws: usize, wi: usize) -> Vec<usize> {
    let per_row = w / ws;
    let (y0, x0) = ((wi / per_row) * ws, (wi % per_row) * ws);
    (0..ws * ws)
        .map(|t| (y0 + t / ws) * w + x0 + t % ws)
        .collect()
}

/// Multi-head self-attention inside non-overlapping `ws × ws` windows.
/// `q`, `k`, `v` hold `heads · dh` channels.
pub fn window_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    ws: usize,
) -> (Tensor<T>, AttnCache<T>) {
    let (c, h, w, hw) = (q.c, q.h, q.w, q.hw());
    assert!(h % ws == 0 && w % ws == 0, "grid must tile into windows");
    assert!(c % heads == 0, "channels must split into heads");
    let dh = c / heads;
    let n = ws * ws;
    let windows = (h / ws) * (w / ws);
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = Tensor::zeros(c, h, w);
    let mut weights = vec![T::zero(); windows * heads * n * n];
    let mut row = vec![T::zero(); n];
    for wi in 0..windows {
        let pos = window_positions(w, ws, wi);
        for hd in 0..heads {
            let block = &mut weights[(wi * heads + hd) * n * n..(wi * heads + hd + 1) * n * n];
            for i in 0..n {
                let mut mx = T::from_f64(f64::NEG_INFINITY);
                for j in 0..n {
                    let mut s = T::zero();
                    for d in 0..dh {
                        let ch = (hd * dh + d) * hw;
                        s += q.data[ch + pos[i]] * k.data[ch + pos[j]];
                    }
                    row[j] = s * scale;
                    if row[j] > mx {
                        mx = row[j];
                    }
                }
                let mut z = T::zero();
                for r in row.iter_mut() {
                    *r = (*r - mx).exp();
                    z += *r;
                }
                for j in 0..n {
                    block[i * n + j] = row[j] / z;
                }
                for d in 0..dh {
                    let ch = (hd * dh + d) * hw;
                    let mut acc = T::zero();
                    for j in 0..n {
                        acc += block[i * n + j] * v.data[ch + pos[j]];
                    }
                    out.data[ch + pos[i]] = acc;
                }
            }
        }
    }
    (
        out,
        AttnCache {
            weights,
            window: ws,
            heads,
        },
    )
}

/// Returns `(dq, dk, dv)`.
pub fn window_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cache: &AttnCache,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (c, h, w, hw) = (q.c, q.h, q.w, q.hw());
    let (ws, heads) = (cache.window, cache.heads);
    let dh = c / heads;
    let n = ws * ws;
    let windows = (h / ws) * (w / ws);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Tensor::zeros(c, h, w);
    let mut dk = Tensor::zeros(c, h, w);
    let mut dv = Tensor::zeros(c, h, w);
    let mut da = vec![0.0; n];
    for wi in 0..windows {
        let pos = window_positions(w, ws, wi);
        for hd in 0..heads {
            let a = &cache.weights[(wi * heads + hd) * n * n..(wi * heads + hd + 1) * n * n];
            for i in 0..n {
                // dA_ij = Σ_d dO_id · V_jd; dV_jd += A_ij · dO_id
                for j in 0..n {
                    let mut s = 0.0;
                    for d in 0..dh {
                        let ch = (hd * dh + d) * hw;
                        let g = dy.data[ch + pos[i]];
                        s += g * v.data[ch + pos[j]];
                        dv.data[ch + pos[j]] += a[i * n + j] * g;
                    }
                    da[j] = s;
                }
                let dot: f64 = (0..n).map(|j| da[j] * a[i * n + j]).sum();
                for j in 0..n {
                    let ds = a[i * n + j] * (da[j] - dot) * scale;
                    for d in 0..dh {
                        let ch = (hd * dh + d) * hw;
                        dq.data[ch + pos[i]] += ds * k.data[ch + pos[j]];
                        dk.data[ch + pos[j]] += ds * q.data[ch + pos[i]];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
