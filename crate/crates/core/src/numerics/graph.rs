//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every forward op appends a node holding its value. `backward` walks the
//! tape in reverse and hands parameter gradients back as [`Gradients`].
//! Nodes whose inputs carry no trainable dependency are never differentiated.

use super::kernels::{self, ConvGeometry};
use super::tensor::dims4;
use super::{Gradients, NumericsError, ParamId, ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    Upsample2x(Var),
    PixelShuffle(Var, usize),
    ChannelNorm { x: Var, inv_std: Vec<T> },
    Affine { x: Var, scale: Var, shift: Var },
    Gelu(Var),
    Softplus(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    Broadcast(Var),
    SliceChannels { x: Var, start: usize },
    Reshape(Var),
    GaussianBits { r: Var, sigma: Var, dr: Vec<T>, ds: Vec<T> },
    SumPerSample(Var),
    MsePerSample { x: Var, target: Vec<T> },
    Dot { x: Var, weights: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Differentiated iff trainable.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.tensor.clone(), Op::Param(id), p.trainable)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize, groups: usize) -> Result<Var, NumericsError> {
        const OP: &str = "conv2d";
        let [n, cin, h, wd] = dims4(self.shape(x), OP)?;
        let [cout, cin_g, kh, kw] = dims4(self.shape(w), OP)?;
        if stride == 0 {
            return Err(NumericsError::dim(OP, "stride must be at least 1"));
        }
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(NumericsError::dim(OP, format!("groups {groups} must divide input channels {cin} and output channels {cout}")));
        }
        if cin_g != cin / groups {
            return Err(NumericsError::dim(OP, format!("weight in-channel axis is {cin_g}, expected input channels {cin} / groups {groups}")));
        }
        if h + 2 * padding < kh || wd + 2 * padding < kw {
            return Err(NumericsError::dim(OP, format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + 2 * padding, wd + 2 * padding)));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(NumericsError::dim(OP, format!("bias axis is {:?}, expected [{cout}]", self.shape(b))));
            }
        }
        let geom = ConvGeometry {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            padding,
            groups,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (wd + 2 * padding - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()), &geom);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        let value = Tensor::new(vec![n, cout, geom.oh, geom.ow], out)?;
        Ok(self.push(value, Op::Conv { x, w, b, geom }, needs))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var, NumericsError> {
        let d = dims4(self.shape(x), "upsample_nearest2x")?;
        let out = kernels::upsample2x_forward(self.value(x).data(), d);
        let value = Tensor::new(vec![d[0], d[1], 2 * d[2], 2 * d[3]], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Upsample2x(x), needs))
    }

    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Result<Var, NumericsError> {
        let d = dims4(self.shape(x), "pixel_shuffle")?;
        if factor == 0 || d[1] % (factor * factor) != 0 {
            return Err(NumericsError::dim("pixel_shuffle", format!("channel axis {} not divisible by {}^2", d[1], factor)));
        }
        let out = kernels::pixel_shuffle_forward(self.value(x).data(), d, factor);
        let value = Tensor::new(vec![d[0], d[1] / (factor * factor), d[2] * factor, d[3] * factor], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::PixelShuffle(x, factor), needs))
    }

    pub fn channel_norm(&mut self, x: Var, eps: T) -> Result<Var, NumericsError> {
        let d = dims4(self.shape(x), "channel_norm")?;
        if !(eps > T::zero()) {
            return Err(NumericsError::Domain(format!("channel_norm eps must be positive, got {eps}")));
        }
        let (out, inv_std) = kernels::channel_norm_forward(self.value(x).data(), d, eps);
        let value = Tensor::new(d.to_vec(), out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::ChannelNorm { x, inv_std }, needs))
    }

    /// `x * (1 + scale) + shift` with `(batch, channel)` scale and shift
    /// broadcast over space.
    pub fn affine_modulate(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var, NumericsError> {
        const OP: &str = "affine_modulate";
        let [n, c, h, w] = dims4(self.shape(x), OP)?;
        for (what, v) in [("scale", scale), ("shift", shift)] {
            if self.shape(v) != [n, c] {
                return Err(NumericsError::dim(OP, format!("{what} axes {:?}, expected [{n}, {c}] (batch, channel)", self.shape(v))));
            }
        }
        let plane = h * w;
        let (xs, ss, bs) = (self.value(x).data(), self.value(scale).data(), self.value(shift).data());
        let mut out = vec![T::zero(); xs.len()];
        for nc in 0..n * c {
            let (a, b) = (T::one() + ss[nc], bs[nc]);
            for (o, &v) in out[nc * plane..][..plane].iter_mut().zip(&xs[nc * plane..][..plane]) {
                *o = v * a + b;
            }
        }
        let needs = self.needs(x) || self.needs(scale) || self.needs(shift);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(value, Op::Affine { x, scale, shift }, needs))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let needs = self.needs(x);
        self.push(value, op, needs)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, kernels::gelu, Op::Gelu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, kernels::softplus, Op::Softplus(x))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::dim(name, format!("operand axes differ: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), needs))
    }

    /// Concatenation along the channel axis of rank-4 tensors.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        const OP: &str = "concat_channels";
        let first = *parts.first().ok_or_else(|| NumericsError::dim(OP, "no operands"))?;
        let [n, _, h, w] = dims4(self.shape(first), OP)?;
        let mut total_c = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = dims4(self.shape(p), OP)?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(NumericsError::dim(OP, format!("batch/spatial axes {:?} differ from {:?}", [pn, ph, pw], [n, h, w])));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &p in parts {
                let pc = self.shape(p)[1];
                out.extend_from_slice(&self.value(p).data()[b * pc * plane..][..pc * plane]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let value = Tensor::new(vec![n, total_c, h, w], out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), needs))
    }

    /// Repeats a `(channel)`-shaped vector over batch and space.
    pub fn broadcast_spatial(&mut self, x: Var, n: usize, h: usize, w: usize) -> Result<Var, NumericsError> {
        let c = match *self.shape(x) {
            [c] | [1, c, 1, 1] => c,
            ref s => return Err(NumericsError::dim("broadcast_spatial", format!("expected (C) or (1, C, 1, 1), got {s:?}"))),
        };
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * plane);
        for _ in 0..n {
            for &v in src {
                out.extend(std::iter::repeat_n(v, plane));
            }
        }
        let needs = self.needs(x);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(value, Op::Broadcast(x), needs))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let [n, c, h, w] = dims4(self.shape(x), "slice_channels")?;
        if start + len > c {
            return Err(NumericsError::dim("slice_channels", format!("range {start}..{} exceeds channel axis {c}", start + len)));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            out.extend_from_slice(&src[(b * c + start) * plane..][..len * plane]);
        }
        let needs = self.needs(x);
        let value = Tensor::new(vec![n, len, h, w], out)?;
        Ok(self.push(value, Op::SliceChannels { x, start }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let value = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    /// Elementwise code length in bits of residuals under discretized
    /// Gaussians with the given scales.
    pub fn gaussian_bits(&mut self, r: Var, sigma: Var) -> Result<Var, NumericsError> {
        if self.shape(r) != self.shape(sigma) {
            return Err(NumericsError::dim("gaussian_bits", format!("residual axes {:?} vs scale axes {:?}", self.shape(r), self.shape(sigma))));
        }
        let (rs, ss) = (self.value(r).data(), self.value(sigma).data());
        if let Some(bad) = ss.iter().find(|s| !(**s > T::zero())) {
            return Err(NumericsError::Domain(format!("gaussian scale must be positive, got {bad}")));
        }
        let mut bits = Vec::with_capacity(rs.len());
        let mut dr = Vec::with_capacity(rs.len());
        let mut ds = Vec::with_capacity(rs.len());
        for (&rv, &sv) in rs.iter().zip(ss) {
            let (b, gr, gs) = kernels::gaussian_bits(rv, sv);
            bits.push(b);
            dr.push(gr);
            ds.push(gs);
        }
        let needs = self.needs(r) || self.needs(sigma);
        let value = Tensor::new(self.shape(r).to_vec(), bits)?;
        Ok(self.push(value, Op::GaussianBits { r, sigma, dr, ds }, needs))
    }

    /// Sums all but the leading axis: `(n, ...) -> (n)`.
    pub fn sum_per_sample(&mut self, x: Var) -> Result<Var, NumericsError> {
        let n = *self.shape(x).first().ok_or_else(|| NumericsError::dim("sum_per_sample", "scalar input"))?;
        let per = self.value(x).numel() / n.max(1);
        let data: Vec<T> = self.value(x).data().chunks(per.max(1)).map(|c| c.iter().copied().sum()).collect();
        let needs = self.needs(x);
        let value = Tensor::new(vec![n], data)?;
        Ok(self.push(value, Op::SumPerSample(x), needs))
    }

    /// Mean squared error to a constant target, per batch item.
    pub fn mse_per_sample(&mut self, x: Var, target: &Tensor<T>) -> Result<Var, NumericsError> {
        if self.shape(x) != target.shape() {
            return Err(NumericsError::dim("mse_per_sample", format!("prediction axes {:?} vs target axes {:?}", self.shape(x), target.shape())));
        }
        let n = *self.shape(x).first().ok_or_else(|| NumericsError::dim("mse_per_sample", "scalar input"))?;
        let per = target.numel() / n.max(1);
        let inv = T::one() / T::lit(per as f64);
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(per)
            .zip(target.data().chunks(per))
            .map(|(a, b)| a.iter().zip(b).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>() * inv)
            .collect();
        let needs = self.needs(x);
        let value = Tensor::new(vec![n], data)?;
        Ok(self.push(value, Op::MsePerSample { x, target: target.data().to_vec() }, needs))
    }

    /// `sum_i weights[i] * x[i]` as a scalar.
    pub fn dot(&mut self, x: Var, weights: &[T]) -> Result<Var, NumericsError> {
        if self.value(x).numel() != weights.len() {
            return Err(NumericsError::dim("dot", format!("{} values vs {} weights", self.value(x).numel(), weights.len())));
        }
        let s: T = self.value(x).data().iter().zip(weights).map(|(&a, &w)| a * w).sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, weights: weights.to_vec() }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let ones = vec![T::one(); self.value(x).numel()];
        self.dot(x, &ones)
    }

    /// Differentiates the scalar `root` and returns gradients of every
    /// trainable parameter it depends on.
    pub fn backward(&self, root: Var, param_count: usize) -> Result<Gradients<T>, NumericsError> {
        if self.value(root).numel() != 1 {
            return Err(NumericsError::dim("backward", format!("root must be a scalar, got axes {:?}", self.shape(root))));
        }
        let mut out = Gradients::new(param_count);
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut [T]> {
        if !self.needs(v) {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>], out: &mut Gradients<T>) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.accumulate(*id, g),
            Op::Conv { x, w, b, geom } => {
                // Each slot borrows `grads` mutably; take them out in turn.
                let mut dx = self.slot(grads, *x).map(|s| s.to_vec());
                let mut dw = self.slot(grads, *w).map(|s| s.to_vec());
                let mut db = b.and_then(|b| self.slot(grads, b).map(|s| s.to_vec()));
                kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(v) = dx {
                    grads[x.0] = Some(v);
                }
                if let Some(v) = dw {
                    grads[w.0] = Some(v);
                }
                if let (Some(b), Some(v)) = (b, db) {
                    grads[b.0] = Some(v);
                }
            }
            Op::Upsample2x(x) => {
                let d = dims4(self.shape(*x), "upsample_nearest2x").expect("checked in forward");
                if let Some(dx) = self.slot(grads, *x) {
                    kernels::upsample2x_backward(g, d, dx);
                }
            }
            Op::PixelShuffle(x, r) => {
                let d = dims4(self.shape(*x), "pixel_shuffle").expect("checked in forward");
                if let Some(dx) = self.slot(grads, *x) {
                    kernels::pixel_shuffle_backward(g, d, *r, dx);
                }
            }
            Op::ChannelNorm { x, inv_std } => {
                let d = dims4(self.shape(*x), "channel_norm").expect("checked in forward");
                if let Some(dx) = self.slot(grads, *x) {
                    kernels::channel_norm_backward(node.value.data(), inv_std, g, d, dx);
                }
            }
            Op::Affine { x, scale, shift } => {
                let [n, c, h, w] = dims4(self.shape(*x), "affine_modulate").expect("checked in forward");
                let plane = h * w;
                let xs = self.value(*x).data();
                let ss = self.value(*scale).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for nc in 0..n * c {
                        let a = T::one() + ss[nc];
                        for (d, &gv) in dx[nc * plane..][..plane].iter_mut().zip(&g[nc * plane..][..plane]) {
                            *d += gv * a;
                        }
                    }
                }
                if let Some(ds) = self.slot(grads, *scale) {
                    for nc in 0..n * c {
                        let mut acc = T::zero();
                        for (&gv, &xv) in g[nc * plane..][..plane].iter().zip(&xs[nc * plane..][..plane]) {
                            acc += gv * xv;
                        }
                        ds[nc] += acc;
                    }
                }
                if let Some(db) = self.slot(grads, *shift) {
                    for nc in 0..n * c {
                        db[nc] += g[nc * plane..][..plane].iter().copied().sum::<T>();
                    }
                }
            }
            Op::Gelu(x) => {
                let xs = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(xs) {
                        *d += gv * kernels::gelu_grad(xv);
                    }
                }
            }
            Op::Softplus(x) => {
                let xs = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(xs) {
                        *d += gv * kernels::sigmoid(xv);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if let Some(da) = self.slot(grads, *a) {
                    add_into(da, g, T::one());
                }
                if let Some(db) = self.slot(grads, *b) {
                    add_into(db, g, sign);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &gv), &o) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * o;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, &gv), &o) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * o;
                    }
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    add_into(dx, g, T::one());
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.slot(grads, *x) {
                    add_into(dx, g, *c);
                }
            }
            Op::Concat(parts) => {
                let [n, total_c, h, w] = dims4(node.value.shape(), "concat_channels").expect("checked in forward");
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if let Some(dp) = self.slot(grads, p) {
                        for b in 0..n {
                            add_into(&mut dp[b * pc * plane..][..pc * plane], &g[(b * total_c + offset) * plane..][..pc * plane], T::one());
                        }
                    }
                    offset += pc;
                }
            }
            Op::Broadcast(x) => {
                let [n, c, h, w] = dims4(node.value.shape(), "broadcast_spatial").expect("checked in forward");
                let plane = h * w;
                if let Some(dx) = self.slot(grads, *x) {
                    for b in 0..n {
                        for (ch, d) in dx.iter_mut().enumerate().take(c) {
                            *d += g[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
                        }
                    }
                }
            }
            Op::SliceChannels { x, start } => {
                let [n, c, h, w] = dims4(self.shape(*x), "slice_channels").expect("checked in forward");
                let len = node.value.shape()[1];
                let plane = h * w;
                if let Some(dx) = self.slot(grads, *x) {
                    for b in 0..n {
                        add_into(&mut dx[(b * c + start) * plane..][..len * plane], &g[b * len * plane..][..len * plane], T::one());
                    }
                }
            }
            Op::GaussianBits { r, sigma, dr, ds } => {
                if let Some(d) = self.slot(grads, *r) {
                    for ((o, &gv), &p) in d.iter_mut().zip(g).zip(dr) {
                        *o += gv * p;
                    }
                }
                if let Some(d) = self.slot(grads, *sigma) {
                    for ((o, &gv), &p) in d.iter_mut().zip(g).zip(ds) {
                        *o += gv * p;
                    }
                }
            }
            Op::SumPerSample(x) => {
                let n = g.len();
                if let Some(dx) = self.slot(grads, *x) {
                    let per = dx.len() / n.max(1);
                    for (chunk, &gv) in dx.chunks_mut(per.max(1)).zip(g) {
                        for d in chunk {
                            *d += gv;
                        }
                    }
                }
            }
            Op::MsePerSample { x, target } => {
                let n = g.len();
                let xs = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    let per = dx.len() / n.max(1);
                    let two_over = T::lit(2.0) / T::lit(per as f64);
                    for (b, &gv) in g.iter().enumerate() {
                        for i in b * per..(b + 1) * per {
                            dx[i] += gv * two_over * (xs[i] - target[i]);
                        }
                    }
                }
            }
            Op::Dot { x, weights } => {
                let gv = g[0];
                if let Some(dx) = self.slot(grads, *x) {
                    for (d, &w) in dx.iter_mut().zip(weights) {
                        *d += gv * w;
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T], factor: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s * factor;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Group;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let mut g = Graph::new();
        let x = g.input(Tensor::filled(vec![1, 1, 4, 4], 1.0));
        let w = g.input(Tensor::filled(vec![1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, w, None, 1, 1, 1).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[0], 4.0);
        assert_eq!(v[5], 9.0);
        assert_eq!(v[15], 4.0);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut g = Graph::new();
        let x = g.input(t(vec![1, 1, 1, 1], vec![3.25]));
        let w = g.input(t(vec![1, 1, 1, 1], vec![1.0]));
        let b = g.input(t(vec![1], vec![0.0]));
        let y = g.conv2d(x, w, Some(b), 1, 0, 1).unwrap();
        assert_eq!(g.value(y).data(), &[3.25]);
    }

    #[test]
    fn conv_shape_errors_name_axes() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(vec![1, 3, 4, 4]));
        let w = g.input(Tensor::zeros(vec![2, 2, 3, 3]));
        let err = g.conv2d(x, w, None, 1, 1, 1).unwrap_err().to_string();
        assert!(err.contains("in-channel"), "{err}");
        assert!(g.conv2d(x, w, None, 0, 1, 1).is_err());
    }

    #[test]
    fn upsample_replicates_and_sums_back() {
        let mut s = ParamStore::new();
        let id = s.add("x", Group::Enc, t(vec![1, 1, 1, 1], vec![2.5])).unwrap();
        let mut g = Graph::new();
        let x = g.param(&s, id);
        let y = g.upsample_nearest2x(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.5; 4]);
        let root = g.sum(y).unwrap();
        let grads = g.backward(root, 1).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[4.0]);

        let z = g.input(Tensor::zeros(vec![1, 8, 4, 4]));
        assert_eq!(g.upsample_nearest2x(z).map(|v| g.shape(v).to_vec()).unwrap(), vec![1, 8, 8, 8]);
        let bad = g.input(Tensor::zeros(vec![8, 4, 4]));
        assert!(g.upsample_nearest2x(bad).is_err());
    }

    #[test]
    fn channel_norm_closed_forms() {
        let mut g = Graph::new();
        let x = g.input(t(vec![1, 2, 1, 1], vec![1.0, 3.0]));
        let y = g.channel_norm(x, 1e-12).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);

        let c = g.input(Tensor::filled(vec![2, 3, 2, 2], 0.7));
        let y = g.channel_norm(c, 1e-6).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v.abs() < 1e-9));
        let single = g.input(Tensor::filled(vec![1, 1, 2, 2], 5.0));
        let y = g.channel_norm(single, 1e-6).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_modulate_linear_cases() {
        let mut g = Graph::new();
        let x = g.input(t(vec![1, 2, 1, 2], vec![1.0, -2.0, 0.5, 4.0]));
        let zero = g.input(Tensor::zeros(vec![1, 2]));
        let id = g.affine_modulate(x, zero, zero).unwrap();
        assert_eq!(g.value(id).data(), g.value(x).data());
        let one = g.input(Tensor::filled(vec![1, 2], 1.0));
        let two = g.input(Tensor::filled(vec![1, 2], 2.0));
        let y = g.affine_modulate(x, one, two).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, -2.0, 3.0, 10.0]);
        let wrong = g.input(Tensor::zeros(vec![1, 3]));
        assert!(g.affine_modulate(x, wrong, zero).is_err());
    }

    #[test]
    fn scale_gradient_is_spatial_sum_of_input_times_upstream() {
        let mut s = ParamStore::new();
        let sc = s.add("s", Group::Dec, Tensor::zeros(vec![1, 2])).unwrap();
        let mut g = Graph::new();
        let xv = vec![1.0, -2.0, 0.5, 4.0];
        let x = g.input(t(vec![1, 2, 1, 2], xv.clone()));
        let scale = g.param(&s, sc);
        let shift = g.input(Tensor::zeros(vec![1, 2]));
        let y = g.affine_modulate(x, scale, shift).unwrap();
        let up = [0.5, 2.0, -1.0, 3.0];
        let root = g.dot(y, &up).unwrap();
        let grads = g.backward(root, 1).unwrap();
        assert_eq!(grads.get(sc).unwrap(), &[xv[0] * up[0] + xv[1] * up[1], xv[2] * up[2] + xv[3] * up[3]]);
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut s = ParamStore::new();
        let a = s.add("a", Group::Enc, Tensor::filled(vec![2], 1.0)).unwrap();
        let b = s.add("b", Group::Pz, Tensor::filled(vec![2], 1.0)).unwrap();
        s.set_trainable_groups(&[Group::Enc]);
        let mut g = Graph::new();
        let (va, vb) = (g.param(&s, a), g.param(&s, b));
        let y = g.mul(va, vb).unwrap();
        let root = g.sum(y).unwrap();
        let grads = g.backward(root, s.len()).unwrap();
        assert!(grads.get(a).is_some());
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn forward_is_bitwise_repeatable() {
        let run = || {
            let mut g = Graph::<f32>::new();
            let x = g.input(Tensor::new(vec![1, 2, 4, 4], (0..32).map(|i| (i as f32 * 0.3).cos()).collect()).unwrap());
            let w = g.input(Tensor::new(vec![3, 2, 3, 3], (0..54).map(|i| (i as f32 * 0.7).sin()).collect()).unwrap());
            let y = g.conv2d(x, w, None, 1, 1, 1).unwrap();
            let y = g.channel_norm(y, 1e-6).unwrap();
            let y = g.gelu(y);
            g.value(y).clone()
        };
        assert_eq!(run(), run());
    }
}
