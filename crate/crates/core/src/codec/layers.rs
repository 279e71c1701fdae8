use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Graph, Group, NumericsError, ParamId, ParamStore, Scalar, Tensor, Var};

pub(crate) const NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// Uniform with variance `gain^2 / fan_in`.
    Scaled(f64),
    Zero,
    Constant(f64),
}

/// Registers parameters with deterministic initial values.
pub(crate) struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn tensor(&mut self, shape: Vec<usize>, fan_in: usize, init: Init) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zero => vec![T::zero(); n],
            Init::Constant(c) => vec![T::lit(c); n],
            Init::Scaled(gain) => {
                let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| T::lit(self.rng.gen_range(-bound..=bound))).collect()
            }
        };
        Tensor::new(shape, data).expect("shape and data agree")
    }

    pub fn param(&mut self, name: String, group: Group, shape: Vec<usize>, fan_in: usize, init: Init) -> Result<ParamId, NumericsError> {
        let t = self.tensor(shape, fan_in, init);
        self.store.add(name, group, t)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        group: Group,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
        init: Init,
        bias: Init,
    ) -> Result<Conv, NumericsError> {
        let fan_in = cin / groups * k * k;
        let w = self.param(format!("{name}.weight"), group, vec![cout, cin / groups, k, k], fan_in, init)?;
        let b = self.param(format!("{name}.bias"), group, vec![cout], fan_in, bias)?;
        let padding = if stride == 1 { k / 2 } else { 0 };
        Ok(Conv { w, b, stride, padding, groups })
    }

    pub fn pointwise(&mut self, name: &str, group: Group, cin: usize, cout: usize, init: Init) -> Result<Conv, NumericsError> {
        self.conv(name, group, cin, cout, 1, 1, 1, init, Init::Zero)
    }

    pub fn block(&mut self, name: &str, group: Group, width: usize, kernel: usize, embed: usize) -> Result<Block, NumericsError> {
        Ok(Block {
            width,
            dw: self.conv(&format!("{name}.dwconv"), group, width, width, kernel, 1, width, Init::Scaled(1.0), Init::Zero)?,
            expand: self.pointwise(&format!("{name}.expand"), group, width, 2 * width, Init::Scaled(1.0))?,
            project: self.pointwise(&format!("{name}.project"), group, 2 * width, width, Init::Scaled(0.1))?,
            modulation: self.pointwise(&format!("{name}.modulation"), group, embed, 2 * width, Init::Zero)?,
        })
    }

    pub fn conditioner(&mut self, name: &str, group: Group, embed: usize) -> Result<Conditioner, NumericsError> {
        Ok(Conditioner {
            fc1: self.pointwise(&format!("{name}.fc1"), group, 1, embed, Init::Scaled(1.0))?,
            fc2: self.pointwise(&format!("{name}.fc2"), group, embed, embed, Init::Scaled(1.0))?,
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var, NumericsError> {
        let w = g.param(s, self.w);
        let b = g.param(s, self.b);
        g.conv2d(x, w, Some(b), self.stride, self.padding, self.groups)
    }
}

/// Depthwise conv, channel norm, λ-driven affine modulation, pointwise
/// expansion with GELU, pointwise projection, residual.
#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub width: usize,
    pub dw: Conv,
    pub expand: Conv,
    pub project: Conv,
    pub modulation: Conv,
}

impl Block {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, emb: Var) -> Result<Var, NumericsError> {
        let n = g.shape(x)[0];
        let c = self.width;
        let y = self.dw.forward(g, s, x)?;
        let y = g.channel_norm(y, T::lit(NORM_EPS))?;
        let m = self.modulation.forward(g, s, emb)?;
        let scale = g.slice_channels(m, 0, c)?;
        let scale = g.reshape(scale, vec![n, c])?;
        let shift = g.slice_channels(m, c, c)?;
        let shift = g.reshape(shift, vec![n, c])?;
        let y = g.affine_modulate(y, scale, shift)?;
        let y = self.expand.forward(g, s, y)?;
        let y = g.gelu(y);
        let y = self.project.forward(g, s, y)?;
        g.add(x, y)
    }
}

/// Two-layer perceptron from normalized log-λ to a per-sample embedding.
#[derive(Clone, Debug)]
pub(crate) struct Conditioner {
    pub fc1: Conv,
    pub fc2: Conv,
}

impl Conditioner {
    /// `t` has shape `(batch, 1, 1, 1)`; the result `(batch, embed, 1, 1)`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, t: Var) -> Result<Var, NumericsError> {
        let h = self.fc1.forward(g, s, t)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, s, h)?;
        Ok(g.gelu(h))
    }
}
