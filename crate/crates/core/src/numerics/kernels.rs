//! Forward/backward kernels on raw NCHW buffers. Shape validation happens in
//! the graph layer; these functions assume consistent dimensions.

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn col_rows(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.cin && self.groups == self.cout && self.groups > 1
    }

    /// Valid output index range along one axis for kernel tap `k`.
    fn out_range(&self, k: usize, input: usize, output: usize) -> (usize, usize) {
        // need 0 <= o*stride + k - padding < input
        let s = self.stride;
        let lo = if k >= self.padding { 0 } else { (self.padding - k).div_ceil(s) };
        let hi_excl = if input + self.padding > k { (input + self.padding - k).div_ceil(s) } else { 0 };
        (lo.min(output), hi_excl.min(output))
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, batch: usize, group: usize, col: &mut [T]) {
    let (cin_g, h, w) = (g.cin_g(), g.h, g.w);
    let plane = g.out_plane();
    col.fill(T::zero());
    for ci in 0..cin_g {
        let src = &x[((batch * g.cin) + group * cin_g + ci) * h * w..][..h * w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.out_range(ky, h, g.oh);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = g.out_range(kx, w, g.ow);
                let row = &mut col[((ci * g.kh + ky) * g.kw + kx) * plane..][..plane];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.padding;
                    for ox in ox_lo..ox_hi {
                        row[oy * g.ow + ox] = src[iy * w + ox * g.stride + kx - g.padding];
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry, batch: usize, group: usize, dx: &mut [T]) {
    let (cin_g, h, w) = (g.cin_g(), g.h, g.w);
    let plane = g.out_plane();
    for ci in 0..cin_g {
        let dst = &mut dx[((batch * g.cin) + group * cin_g + ci) * h * w..][..h * w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.out_range(ky, h, g.oh);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = g.out_range(kx, w, g.ow);
                let row = &col[((ci * g.kh + ky) * g.kw + kx) * plane..][..plane];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.padding;
                    for ox in ox_lo..ox_hi {
                        dst[iy * w + ox * g.stride + kx - g.padding] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
    let plane = g.out_plane();
    let mut out = vec![T::zero(); g.n * g.cout * plane];
    if g.is_depthwise() {
        depthwise_forward(x, weight, g, &mut out);
    } else {
        let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.col_rows());
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
        for b in 0..g.n {
            for grp in 0..g.groups {
                let rhs: &[T] = if g.is_pointwise() {
                    &x[(b * g.cin + grp * cin_g) * plane..][..cin_g * plane]
                } else {
                    im2col(x, g, b, grp, &mut col);
                    &col
                };
                let w_g = &weight[grp * cout_g * k..][..cout_g * k];
                let o = &mut out[(b * g.cout + grp * cout_g) * plane..][..cout_g * plane];
                T::gemm(cout_g, k, plane, T::one(), w_g, k as isize, 1, rhs, plane as isize, 1, T::zero(), o, plane as isize, 1);
            }
        }
    }
    if let Some(bias) = bias {
        for b in 0..g.n {
            for (co, &bv) in bias.iter().enumerate() {
                for v in &mut out[(b * g.cout + co) * plane..][..plane] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Accumulates input/weight/bias gradients. Batch items are reduced in
/// ascending order.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    g: &ConvGeometry,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let plane = g.out_plane();
    if let Some(db) = db {
        for b in 0..g.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let mut s = T::zero();
                for &v in &dout[(b * g.cout + co) * plane..][..plane] {
                    s += v;
                }
                *acc += s;
            }
        }
    }
    if g.is_depthwise() {
        depthwise_backward(x, weight, dout, g, dx, dw);
        return;
    }
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.col_rows());
    let pointwise = g.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * plane] };
    let mut dcol = vec![T::zero(); if pointwise { 0 } else { k * plane }];
    let mut dx = dx;
    let mut dw = dw;
    for b in 0..g.n {
        for grp in 0..g.groups {
            let d_o = &dout[(b * g.cout + grp * cout_g) * plane..][..cout_g * plane];
            if let Some(dw) = dw.as_deref_mut() {
                let rhs: &[T] = if pointwise {
                    &x[(b * g.cin + grp * cin_g) * plane..][..cin_g * plane]
                } else {
                    im2col(x, g, b, grp, &mut col);
                    &col
                };
                let dw_g = &mut dw[grp * cout_g * k..][..cout_g * k];
                // dW (cout_g x k) += dOut (cout_g x P) * col^T (P x k)
                T::gemm(cout_g, plane, k, T::one(), d_o, plane as isize, 1, rhs, 1, plane as isize, T::one(), dw_g, k as isize, 1);
            }
            if let Some(dx) = dx.as_deref_mut() {
                let w_g = &weight[grp * cout_g * k..][..cout_g * k];
                if pointwise {
                    let dst = &mut dx[(b * g.cin + grp * cin_g) * plane..][..cin_g * plane];
                    T::gemm(k, cout_g, plane, T::one(), w_g, 1, k as isize, d_o, plane as isize, 1, T::one(), dst, plane as isize, 1);
                } else {
                    T::gemm(k, cout_g, plane, T::one(), w_g, 1, k as isize, d_o, plane as isize, 1, T::zero(), &mut dcol, plane as isize, 1);
                    col2im(&dcol, g, b, grp, dx);
                }
            }
        }
    }
}

fn depthwise_forward<T: Scalar>(x: &[T], weight: &[T], g: &ConvGeometry, out: &mut [T]) {
    let (h, w, plane) = (g.h, g.w, g.out_plane());
    for b in 0..g.n {
        for c in 0..g.cin {
            let src = &x[(b * g.cin + c) * h * w..][..h * w];
            let dst = &mut out[(b * g.cout + c) * plane..][..plane];
            let wk = &weight[c * g.kh * g.kw..][..g.kh * g.kw];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.out_range(ky, h, g.oh);
                for kx in 0..g.kw {
                    let (ox_lo, ox_hi) = g.out_range(kx, w, g.ow);
                    let wv = wk[ky * g.kw + kx];
                    for oy in oy_lo..oy_hi {
                        let row = &src[(oy * g.stride + ky - g.padding) * w..][..w];
                        let orow = &mut dst[oy * g.ow..][..g.ow];
                        if g.stride == 1 {
                            let off = kx as isize - g.padding as isize;
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * row[(ox as isize + off) as usize];
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * row[ox * g.stride + kx - g.padding];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    g: &ConvGeometry,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (h, w, plane) = (g.h, g.w, g.out_plane());
    for b in 0..g.n {
        for c in 0..g.cin {
            let src = &x[(b * g.cin + c) * h * w..][..h * w];
            let d_o = &dout[(b * g.cout + c) * plane..][..plane];
            let wk = &weight[c * g.kh * g.kw..][..g.kh * g.kw];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.out_range(ky, h, g.oh);
                for kx in 0..g.kw {
                    let (ox_lo, ox_hi) = g.out_range(kx, w, g.ow);
                    let tap = ky * g.kw + kx;
                    let mut acc = T::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        for ox in ox_lo..ox_hi {
                            let ix = ox * g.stride + kx - g.padding;
                            let d = d_o[oy * g.ow + ox];
                            acc += d * src[iy * w + ix];
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[(b * g.cin + c) * h * w + iy * w + ix] += wk[tap] * d;
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[c * g.kh * g.kw + tap] += acc;
                    }
                }
            }
        }
    }
}

pub fn upsample2x_forward<T: Scalar>(x: &[T], [n, c, h, w]: [usize; 4]) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..][..h * w];
        let dst = &mut out[plane * oh * ow..][..oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Scalar>(dout: &[T], [n, c, h, w]: [usize; 4], dx: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for plane in 0..n * c {
        let src = &dout[plane * oh * ow..][..oh * ow];
        let dst = &mut dx[plane * h * w..][..h * w];
        for y in 0..oh {
            for xx in 0..ow {
                dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
            }
        }
    }
}

/// Depth-to-space: `(n, c*r*r, h, w) -> (n, c, h*r, w*r)`.
/// (input channel, offset within the input plane) feeding output `(c, y, x)`.
fn pixel_shuffle_index(c: usize, y: usize, x: usize, r: usize, w: usize) -> (usize, usize) {
    let (iy, dy) = (y / r, y % r);
    let (ix, dx) = (x / r, x % r);
    (c * r * r + dy * r + dx, iy * w + ix)
}

pub fn pixel_shuffle_forward<T: Scalar>(x: &[T], [n, cin, h, w]: [usize; 4], r: usize) -> Vec<T> {
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let (ic, off) = pixel_shuffle_index(ch, y, xx, r, w);
                    out[((b * c + ch) * oh + y) * ow + xx] = x[(b * cin + ic) * h * w + off];
                }
            }
        }
    }
    out
}

pub fn pixel_shuffle_backward<T: Scalar>(dout: &[T], [n, cin, h, w]: [usize; 4], r: usize, dx: &mut [T]) {
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let (ic, off) = pixel_shuffle_index(ch, y, xx, r, w);
                    dx[(b * cin + ic) * h * w + off] += dout[((b * c + ch) * oh + y) * ow + xx];
                }
            }
        }
    }
}

/// Normalizes over channels at every (batch, position); returns the output
/// and the per-position inverse standard deviation.
pub fn channel_norm_forward<T: Scalar>(x: &[T], [n, c, h, w]: [usize; 4], eps: T) -> (Vec<T>, Vec<T>) {
    let plane = h * w;
    let inv_c = T::one() / T::lit(c as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); n * plane];
    let mut mean = vec![T::zero(); plane];
    let mut var = vec![T::zero(); plane];
    for b in 0..n {
        let xs = &x[b * c * plane..][..c * plane];
        mean.fill(T::zero());
        var.fill(T::zero());
        for ch in 0..c {
            for (m, &v) in mean.iter_mut().zip(&xs[ch * plane..][..plane]) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m *= inv_c;
        }
        for ch in 0..c {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(&xs[ch * plane..][..plane]) {
                let d = v - m;
                *s += d * d;
            }
        }
        let is = &mut inv_std[b * plane..][..plane];
        for (i, &s) in is.iter_mut().zip(&var) {
            *i = T::one() / (s * inv_c + eps).sqrt();
        }
        let os = &mut out[b * c * plane..][..c * plane];
        for ch in 0..c {
            for p in 0..plane {
                os[ch * plane + p] = (xs[ch * plane + p] - mean[p]) * is[p];
            }
        }
    }
    (out, inv_std)
}

pub fn channel_norm_backward<T: Scalar>(y: &[T], inv_std: &[T], dy: &[T], [n, c, h, w]: [usize; 4], dx: &mut [T]) {
    let plane = h * w;
    let inv_c = T::one() / T::lit(c as f64);
    let mut mdy = vec![T::zero(); plane];
    let mut mdyy = vec![T::zero(); plane];
    for b in 0..n {
        let base = b * c * plane;
        mdy.fill(T::zero());
        mdyy.fill(T::zero());
        for ch in 0..c {
            for p in 0..plane {
                let i = base + ch * plane + p;
                mdy[p] += dy[i];
                mdyy[p] += dy[i] * y[i];
            }
        }
        for ch in 0..c {
            for p in 0..plane {
                let i = base + ch * plane + p;
                dx[i] += inv_std[b * plane + p] * (dy[i] - mdy[p] * inv_c - y[i] * mdyy[p] * inv_c);
            }
        }
    }
}

pub const GELU_SIGMOID_SCALE: f64 = 1.702;

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn gelu<T: Scalar>(x: T) -> T {
    x * sigmoid(T::lit(GELU_SIGMOID_SCALE) * x)
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::lit(GELU_SIGMOID_SCALE);
    let s = sigmoid(k * x);
    s + k * x * s * (T::one() - s)
}

pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Smallest likelihood assigned to a symbol; below it the rate saturates and
/// carries no gradient.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

/// Bits and their partial derivatives for a residual `r` (mean already
/// subtracted) under a unit-bin discretized Gaussian of scale `sigma`.
pub fn gaussian_bits<T: Scalar>(r: T, sigma: T) -> (T, T, T) {
    let half = T::lit(0.5);
    let inv_sqrt2 = T::FRAC_1_SQRT_2();
    let upper = (r + half) / sigma;
    let lower = (r - half) / sigma;
    // P = Phi(upper) - Phi(lower), evaluated through the tail on the side of
    // the residual's sign so neither term cancels catastrophically.
    let p = if r >= T::zero() {
        half * ((lower * inv_sqrt2).erfc() - (upper * inv_sqrt2).erfc())
    } else {
        half * ((-upper * inv_sqrt2).erfc() - (-lower * inv_sqrt2).erfc())
    };
    let floor = T::lit(LIKELIHOOD_FLOOR);
    let ln2 = T::LN_2();
    if !(p > floor) {
        return (-floor.ln() / ln2, T::zero(), T::zero());
    }
    let norm = T::one() / (T::lit(2.0) * T::PI()).sqrt();
    let pdf = |t: T| norm * (-(t * t) * half).exp();
    let (pu, pl) = (pdf(upper), pdf(lower));
    let dp_dr = (pu - pl) / sigma;
    let dp_ds = -(upper * pu - lower * pl) / sigma;
    let dbits_dp = -T::one() / (p * ln2);
    (-p.ln() / ln2, dbits_dp * dp_dr, dbits_dp * dp_ds)
}
