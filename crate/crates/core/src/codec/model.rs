use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::layers::{Block, Builder, Conditioner, Conv, Init};
use super::{CodecError, ModelConfig, Variant};
use crate::entropy::EntropyTables;
use crate::numerics::checkpoint::{self, CheckpointError};
use crate::numerics::{Graph, Group, ParamId, ParamStore, Scalar, Tensor, Var};

/// Quantization of latents produced by the encoder.
pub enum Quantizer<'a> {
    /// `z_hat = mu + round_half_away(z - mu)`.
    Round,
    /// `z_hat = z + u`, `u ~ U(-0.5, 0.5)` from the given generator.
    Noise(&'a mut ChaCha8Rng),
}

/// Produces `z_hat` for a stage from its predicted `(mu, sigma)` when the
/// latents come from a bitstream.
pub type StageDecoder<'a, T> = dyn FnMut(usize, &Tensor<T>, &Tensor<T>) -> Result<Tensor<T>, CodecError> + 'a;

pub enum LatentSource<'a, 'q, T> {
    /// Encoder features, coarsest stage first.
    Encode { h: &'a [Var], quant: Quantizer<'q> },
    Decode(&'a mut StageDecoder<'q, T>),
}

/// Graph handles of one stage of the entropy pass.
#[derive(Clone, Copy, Debug)]
pub struct StageVars {
    pub z: Option<Var>,
    pub z_hat: Var,
    pub mu: Var,
    pub sigma: Var,
    pub e: Var,
}

impl StageVars {
    pub fn decoder_input(&self) -> DecoderInput {
        DecoderInput { z_hat: self.z_hat, e: self.e }
    }
}

/// What the decoder branch consumes from one stage.
#[derive(Clone, Copy, Debug)]
pub struct DecoderInput {
    pub z_hat: Var,
    pub e: Var,
}

/// Concrete values of a round-mode pass over one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Analysis<T> {
    pub symbols: Vec<Vec<i64>>,
    pub mu: Vec<Tensor<T>>,
    pub sigma: Vec<Tensor<T>>,
    pub z_hat: Vec<Tensor<T>>,
    pub e: Vec<Tensor<T>>,
    pub x_hat: Tensor<T>,
}

#[derive(Clone, Debug)]
struct Posterior {
    fuse: Conv,
    block: Block,
    out: Conv,
}

#[derive(Clone, Debug)]
struct EncStage {
    down: Option<Conv>,
    blocks: Vec<Block>,
    posterior: Posterior,
}

#[derive(Clone, Debug)]
struct PzStage {
    blocks: Vec<Block>,
    head: Conv,
    proj: Conv,
}

#[derive(Clone, Debug)]
enum Decoder {
    Parallel { r0: ParamId, fuse: Vec<Conv>, blocks: Vec<Vec<Block>>, out: Conv },
    Sequential { input: Conv, blocks: Vec<Block>, out: Conv },
}

#[derive(Clone, Debug)]
struct Network {
    patchify: Conv,
    enc: Vec<EncStage>,
    enc_cond: Conditioner,
    e0: ParamId,
    pz: Vec<PzStage>,
    pz_cond: Conditioner,
    dec: Decoder,
    dec_cond: Conditioner,
}

fn build_network<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>, seq_width: usize) -> Result<Network, CodecError> {
    let mut b = Builder { store, rng: ChaCha8Rng::seed_from_u64(cfg.seed) };
    let (n, l, ctx, k, emb) = (cfg.stages, cfg.latent_channels, cfg.context_width, cfg.kernel, cfg.embed_width);
    let w = &cfg.widths;
    let blocks = |b: &mut Builder<T>, prefix: &str, group: Group, width: usize, count: usize| -> Result<Vec<Block>, CodecError> {
        (0..count).map(|j| b.block(&format!("{prefix}.block{j}"), group, width, k, emb).map_err(CodecError::from)).collect()
    };

    let patchify = b.conv("enc.patchify", Group::Enc, 3, w[n - 1], cfg.patch, cfg.patch, 1, Init::Scaled(1.0), Init::Zero)?;
    let enc_cond = b.conditioner("enc.cond", Group::Enc, emb)?;
    let mut enc = Vec::with_capacity(n);
    for i in 0..n {
        let p = format!("enc.stage{}", i + 1);
        let down = if i + 1 < n {
            Some(b.conv(&format!("{p}.down"), Group::Enc, w[i + 1], w[i], 2, 2, 1, Init::Scaled(1.0), Init::Zero)?)
        } else {
            None
        };
        let bl = blocks(&mut b, &p, Group::Enc, w[i], cfg.blocks_per_stage)?;
        let posterior = Posterior {
            fuse: b.pointwise(&format!("{p}.posterior.fuse"), Group::Enc, ctx + w[i], w[i], Init::Scaled(1.0))?,
            block: b.block(&format!("{p}.posterior.block0"), Group::Enc, w[i], k, emb)?,
            out: b.pointwise(&format!("{p}.posterior.out"), Group::Enc, w[i], l, Init::Scaled(1.0))?,
        };
        enc.push(EncStage { down, blocks: bl, posterior });
    }

    let e0 = b.param("pz.e0".into(), Group::Pz, vec![ctx], 1, Init::Scaled(1.0))?;
    let pz_cond = b.conditioner("pz.cond", Group::Pz, emb)?;
    let mut pz = Vec::with_capacity(n);
    for i in 0..n {
        let p = format!("pz.stage{}", i + 1);
        pz.push(PzStage {
            blocks: blocks(&mut b, &p, Group::Pz, ctx, cfg.blocks_per_stage)?,
            head: b.pointwise(&format!("{p}.head"), Group::Pz, ctx, 2 * l, Init::Scaled(0.1))?,
            proj: b.pointwise(&format!("{p}.proj"), Group::Pz, l, ctx, Init::Scaled(1.0))?,
        });
    }

    let dec_cond = b.conditioner("dec.cond", Group::Dec, emb)?;
    let out_ch = 3 * cfg.patch * cfg.patch;
    let dec = match cfg.variant {
        Variant::Parallel => {
            let r0 = b.param("dec.r0".into(), Group::Dec, vec![ctx], 1, Init::Scaled(1.0))?;
            let mut fuse = Vec::with_capacity(n);
            let mut bl = Vec::with_capacity(n);
            for i in 0..n {
                let p = format!("dec.stage{}", i + 1);
                let r_in = if i == 0 { ctx } else { w[i - 1] };
                fuse.push(b.pointwise(&format!("{p}.fuse"), Group::Dec, r_in + l + ctx, w[i], Init::Scaled(1.0))?);
                bl.push(blocks(&mut b, &p, Group::Dec, w[i], cfg.blocks_per_stage)?);
            }
            let out = b.conv("dec.out", Group::Dec, w[n - 1], out_ch, 1, 1, 1, Init::Scaled(1.0), Init::Constant(0.5))?;
            Decoder::Parallel { r0, fuse, blocks: bl, out }
        }
        Variant::Sequential => Decoder::Sequential {
            input: b.pointwise("dec.input", Group::Dec, ctx, seq_width, Init::Scaled(1.0))?,
            blocks: blocks(&mut b, "dec", Group::Dec, seq_width, n * cfg.blocks_per_stage)?,
            out: b.conv("dec.out", Group::Dec, seq_width, out_ch, 1, 1, 1, Init::Scaled(1.0), Init::Constant(0.5))?,
        },
    };
    Ok(Network { patchify, enc, enc_cond, e0, pz, pz_cond, dec, dec_cond })
}

fn parameter_count(cfg: &ModelConfig, seq_width: usize) -> Result<usize, CodecError> {
    let mut s = ParamStore::<f32>::new();
    build_network(cfg, &mut s, seq_width)?;
    Ok(s.count(None))
}

/// Sequential decoder width whose total parameter count is closest to the
/// parallel model built from the same config.
pub fn matched_sequential_width(cfg: &ModelConfig) -> Result<usize, CodecError> {
    let target = parameter_count(&ModelConfig { variant: Variant::Parallel, ..cfg.clone() }, 0)?;
    let seq = ModelConfig { variant: Variant::Sequential, ..cfg.clone() };
    let (mut lo, mut hi) = (1usize, 4096usize);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if parameter_count(&seq, mid)? < target {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let above = parameter_count(&seq, lo)?.abs_diff(target);
    let below = if lo > 1 { parameter_count(&seq, lo - 1)?.abs_diff(target) } else { usize::MAX };
    Ok(if below < above { lo - 1 } else { lo })
}

/// `mu + round_half_away_from_zero(z - mu)` or `z + U(-0.5, 0.5)`.
pub fn quantize_residual<T: Scalar>(z: &[T], mu: &[T], quant: &mut Quantizer<'_>) -> Result<Vec<T>, CodecError> {
    if z.len() != mu.len() {
        return Err(CodecError::Dimension(format!("latent has {} values, mean has {}", z.len(), mu.len())));
    }
    Ok(match quant {
        Quantizer::Round => z.iter().zip(mu).map(|(&z, &m)| m + (z - m).round()).collect(),
        Quantizer::Noise(rng) => z.iter().map(|&z| z + uniform_noise(rng)).collect(),
    })
}

/// Exactly representable in f32, strictly inside (-0.5, 0.5).
fn uniform_noise<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    let k = rng.gen_range(1u32..(1 << 24));
    T::lit(k as f64 / (1u32 << 24) as f64 - 0.5)
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    seq_width: usize,
    store: ParamStore<T>,
    tables: EntropyTables,
    net: Network,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self, CodecError> {
        config.validate()?;
        let seq_width = match (config.variant, config.sequential_width) {
            (Variant::Parallel, _) => 0,
            (Variant::Sequential, Some(w)) => w,
            (Variant::Sequential, None) => matched_sequential_width(&config)?,
        };
        let mut store = ParamStore::new();
        let net = build_network(&config, &mut store, seq_width)?;
        let model = Model { config, seq_width, store, tables: EntropyTables::default(), net };
        if let Some(budget) = model.config.pz_budget {
            let f = model.pz_fraction();
            if f > budget {
                return Err(CodecError::Config(format!("entropy model holds {:.1}% of parameters, budget {:.1}%", 100.0 * f, 100.0 * budget)));
            }
        }
        Ok(model)
    }

    /// Rebuilds the architecture of `config` and takes its values from
    /// `loaded`, which must hold exactly the same names and shapes.
    pub fn from_parts(config: ModelConfig, loaded: ParamStore<T>) -> Result<Self, CodecError> {
        let mut m = Model::new(config)?;
        if loaded.len() != m.store.len() {
            return Err(CodecError::Contract(format!("checkpoint has {} parameters, architecture needs {}", loaded.len(), m.store.len())));
        }
        for (_, p) in loaded.iter() {
            let id = m.store.id(&p.name).ok_or_else(|| CodecError::Contract(format!("unexpected parameter `{}`", p.name)))?;
            let dst = m.store.get(id);
            if dst.group != p.group || dst.tensor.shape() != p.tensor.shape() {
                return Err(CodecError::Contract(format!(
                    "parameter `{}` is {:?} in group {}, expected {:?} in group {}",
                    p.name,
                    p.tensor.shape(),
                    p.group,
                    dst.tensor.shape(),
                    dst.group
                )));
            }
            *m.store.tensor_mut(id) = p.tensor.clone();
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Decoder width actually used by the sequential variant (0 if parallel).
    pub fn sequential_width(&self) -> usize {
        self.seq_width
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn tables(&self) -> &EntropyTables {
        &self.tables
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), seq_width: self.seq_width, store: self.store.cast(), tables: self.tables.clone(), net: self.net.clone() }
    }

    /// Checkpoint text: the config with the resolved sequential width.
    fn config_text(&self) -> String {
        let mut c = self.config.clone();
        if c.variant == Variant::Sequential {
            c.sequential_width = Some(self.seq_width);
        }
        c.to_text()
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        checkpoint::to_bytes(&self.store, &self.config_text())
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let (text, store) = checkpoint::from_bytes(bytes)?;
        Model::from_parts(ModelConfig::from_text(&text)?, store)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CodecError> {
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| CodecError::Checkpoint(CheckpointError::Io(e)))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CodecError> {
        let bytes = std::fs::read(path).map_err(|e| CodecError::Checkpoint(CheckpointError::Io(e)))?;
        Model::from_checkpoint_bytes(&bytes)
    }

    /// SHA-256 of the entropy-model parameters and the scale table.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (_, p) in self.store.iter().filter(|(_, p)| p.group == Group::Pz) {
            h.update((p.name.len() as u32).to_le_bytes());
            h.update(p.name.as_bytes());
            h.update([p.tensor.rank() as u8]);
            for &d in p.tensor.shape() {
                h.update((d as u32).to_le_bytes());
            }
            for &v in p.tensor.data() {
                h.update((v.as_f64() as f32).to_le_bytes());
            }
        }
        h.update(self.tables.scales().to_bytes());
        h.finalize().into()
    }

    /// Fraction of all parameter values that belong to the entropy model.
    pub fn pz_fraction(&self) -> f64 {
        self.store.count(Some(Group::Pz)) as f64 / self.store.count(None) as f64
    }

    /// `(ln λ - ln λ_low) / (ln λ_high - ln λ_low)`; defined beyond [0, 1].
    pub fn normalized_lambda(&self, lambda: f64) -> f64 {
        let (lo, hi) = (self.config.lambda_low.ln(), self.config.lambda_high.ln());
        (lambda.ln() - lo) / (hi - lo)
    }

    pub fn lambda_input(&self, g: &mut Graph<T>, lambdas: &[f64]) -> Result<Var, CodecError> {
        if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(CodecError::Domain(format!("lambda must be positive and finite, got {bad}")));
        }
        let t = Tensor::new(vec![lambdas.len(), 1, 1, 1], lambdas.iter().map(|&l| T::lit(self.normalized_lambda(l))).collect())?;
        Ok(g.input(t))
    }

    /// Encoder pyramid, coarsest stage first.
    pub fn encode_features(&self, g: &mut Graph<T>, x: Var, t: Var) -> Result<Vec<Var>, CodecError> {
        let [_, c, h, w] = g.value(x).dims4("encode_features")?;
        if c != 3 {
            return Err(CodecError::Dimension(format!("expected 3 colour channels, got {c}")));
        }
        self.config.stage_sizes(h, w)?;
        let s = &self.store;
        let emb = self.net.enc_cond.forward(g, s, t)?;
        let mut feats = vec![None; self.config.stages];
        let mut cur = self.net.patchify.forward(g, s, x)?;
        for i in (0..self.config.stages).rev() {
            let st = &self.net.enc[i];
            if let Some(down) = &st.down {
                cur = down.forward(g, s, cur)?;
            }
            for b in &st.blocks {
                cur = b.forward(g, s, cur, emb)?;
            }
            feats[i] = Some(cur);
        }
        Ok(feats.into_iter().map(|f| f.expect("every stage visited")).collect())
    }

    /// Runs the entropy branch top-down. Latents come either from the
    /// encoder pyramid or, when decoding, from `LatentSource::Decode`.
    pub fn entropy_pass(
        &self,
        g: &mut Graph<T>,
        t: Var,
        batch: usize,
        sizes: &[(usize, usize)],
        mut source: LatentSource<'_, '_, T>,
    ) -> Result<Vec<StageVars>, CodecError> {
        let n = self.config.stages;
        if sizes.len() != n {
            return Err(CodecError::Contract(format!("{} stage sizes for {n} stages", sizes.len())));
        }
        if let LatentSource::Encode { h, .. } = &source {
            if h.len() != n {
                return Err(CodecError::Contract(format!("{} encoder features for {n} stages", h.len())));
            }
        }
        let s = &self.store;
        let l = self.config.latent_channels;
        let pz_emb = self.net.pz_cond.forward(g, s, t)?;
        let enc_emb = match source {
            LatentSource::Encode { .. } => Some(self.net.enc_cond.forward(g, s, t)?),
            LatentSource::Decode(_) => None,
        };
        let e0 = g.param(s, self.net.e0);
        let mut prev: Option<Var> = None;
        let mut out = Vec::with_capacity(n);
        for (i, st) in self.net.pz.iter().enumerate() {
            let (hh, ww) = sizes[i];
            let mut ctx = match prev {
                None => g.broadcast_spatial(e0, batch, hh, ww)?,
                Some(e) => g.upsample_nearest2x(e)?,
            };
            if g.shape(ctx)[2..] != [hh, ww] {
                return Err(CodecError::Dimension(format!("stage {} context is {:?}, expected {hh}x{ww}", i + 1, &g.shape(ctx)[2..])));
            }
            for b in &st.blocks {
                ctx = b.forward(g, s, ctx, pz_emb)?;
            }
            let head = st.head.forward(g, s, ctx)?;
            let mu = g.slice_channels(head, 0, l)?;
            let raw = g.slice_channels(head, l, l)?;
            let sigma = g.softplus(raw);
            let sigma = g.add_scalar(sigma, T::lit(self.config.sigma_floor));
            let (z, z_hat) = match &mut source {
                LatentSource::Encode { h, quant } => {
                    let post = &self.net.enc[i].posterior;
                    let emb = enc_emb.expect("encode mode has an encoder embedding");
                    let f = g.concat_channels(&[ctx, h[i]])?;
                    let f = post.fuse.forward(g, s, f)?;
                    let f = post.block.forward(g, s, f, emb)?;
                    let z = post.out.forward(g, s, f)?;
                    let z_hat = match quant {
                        Quantizer::Round => {
                            let v = quantize_residual(g.value(z).data(), g.value(mu).data(), quant)?;
                            let shape = g.shape(z).to_vec();
                            g.input(Tensor::new(shape, v)?)
                        }
                        Quantizer::Noise(rng) => {
                            let noise: Vec<T> = (0..g.value(z).numel()).map(|_| uniform_noise(rng)).collect();
                            let shape = g.shape(z).to_vec();
                            let u = g.input(Tensor::new(shape, noise)?);
                            g.add(z, u)?
                        }
                    };
                    (Some(z), z_hat)
                }
                LatentSource::Decode(decode) => {
                    let v = decode(i, g.value(mu), g.value(sigma))?;
                    if v.shape() != g.shape(mu) {
                        return Err(CodecError::Dimension(format!("stage {} decoded latents {:?}, expected {:?}", i + 1, v.shape(), g.shape(mu))));
                    }
                    (None, g.input(v))
                }
            };
            let p = st.proj.forward(g, s, z_hat)?;
            let e = g.add(ctx, p)?;
            out.push(StageVars { z, z_hat, mu, sigma, e });
            prev = Some(e);
        }
        Ok(out)
    }

    /// Reconstruction from quantized latents and entropy features. Not
    /// clamped.
    pub fn decoder_pass(&self, g: &mut Graph<T>, stages: &[DecoderInput], t: Var, sizes: &[(usize, usize)]) -> Result<Var, CodecError> {
        let n = self.config.stages;
        if stages.len() != n || sizes.len() != n {
            return Err(CodecError::Contract(format!("decoder needs {n} stages, got {} latents and {} sizes", stages.len(), sizes.len())));
        }
        let s = &self.store;
        let emb = self.net.dec_cond.forward(g, s, t)?;
        let batch = g.shape(stages[0].z_hat)[0];
        let (r, out) = match &self.net.dec {
            Decoder::Parallel { r0, fuse, blocks, out } => {
                let r0 = g.param(s, *r0);
                let mut prev: Option<Var> = None;
                for i in 0..n {
                    let (hh, ww) = sizes[i];
                    let up = match prev {
                        None => g.broadcast_spatial(r0, batch, hh, ww)?,
                        Some(r) => g.upsample_nearest2x(r)?,
                    };
                    let cat = g.concat_channels(&[up, stages[i].z_hat, stages[i].e])?;
                    let mut r = fuse[i].forward(g, s, cat)?;
                    for b in &blocks[i] {
                        r = b.forward(g, s, r, emb)?;
                    }
                    prev = Some(r);
                }
                (prev.expect("at least one stage"), out)
            }
            Decoder::Sequential { input, blocks, out } => {
                let mut r = input.forward(g, s, stages[n - 1].e)?;
                for b in blocks {
                    r = b.forward(g, s, r, emb)?;
                }
                (r, out)
            }
        };
        let y = out.forward(g, s, r)?;
        Ok(g.pixel_shuffle(y, self.config.patch)?)
    }

    fn collect(g: &Graph<T>, stages: &[StageVars], x_hat: Var, symbols: Vec<Vec<i64>>) -> Analysis<T> {
        Analysis {
            symbols,
            mu: stages.iter().map(|s| g.value(s.mu).clone()).collect(),
            sigma: stages.iter().map(|s| g.value(s.sigma).clone()).collect(),
            z_hat: stages.iter().map(|s| g.value(s.z_hat).clone()).collect(),
            e: stages.iter().map(|s| g.value(s.e).clone()).collect(),
            x_hat: g.value(x_hat).clone(),
        }
    }

    /// Round-mode encode and reconstruction of a single `(1, 3, H, W)` image.
    pub fn analyze(&self, x: &Tensor<T>, lambda: f64) -> Result<Analysis<T>, CodecError> {
        let [n, _, h, w] = x.dims4("analyze")?;
        if n != 1 {
            return Err(CodecError::Dimension(format!("analyze takes one image, got batch {n}")));
        }
        let sizes = self.config.stage_sizes(h, w)?;
        let mut g = Graph::new();
        let t = self.lambda_input(&mut g, &[lambda])?;
        let xv = g.input(x.clone());
        let feats = self.encode_features(&mut g, xv, t)?;
        let stages = self.entropy_pass(&mut g, t, 1, &sizes, LatentSource::Encode { h: &feats, quant: Quantizer::Round })?;
        let x_hat = self.decoder_pass(&mut g, &stages.iter().map(StageVars::decoder_input).collect::<Vec<_>>(), t, &sizes)?;
        let symbols = stages
            .iter()
            .map(|s| g.value(s.z_hat).data().iter().zip(g.value(s.mu).data()).map(|(&zh, &m)| (zh - m).as_f64().round() as i64).collect())
            .collect();
        Ok(Self::collect(&g, &stages, x_hat, symbols))
    }

    /// Decoder-side pass over one `h x w` image: `next_symbols` receives each
    /// stage's `(stage, mu, sigma)` and returns its residual symbols.
    pub fn synthesize<F>(&self, h: usize, w: usize, lambda: f64, mut next_symbols: F) -> Result<Analysis<T>, CodecError>
    where
        F: FnMut(usize, &Tensor<T>, &Tensor<T>) -> Result<Vec<i64>, CodecError>,
    {
        let sizes = self.config.stage_sizes(h, w)?;
        let mut g = Graph::new();
        let t = self.lambda_input(&mut g, &[lambda])?;
        let mut symbols = Vec::with_capacity(sizes.len());
        let mut decode = |i: usize, mu: &Tensor<T>, sigma: &Tensor<T>| -> Result<Tensor<T>, CodecError> {
            let sym = next_symbols(i, mu, sigma)?;
            if sym.len() != mu.numel() {
                return Err(CodecError::Contract(format!("stage {} yielded {} symbols, expected {}", i + 1, sym.len(), mu.numel())));
            }
            let v = mu.data().iter().zip(&sym).map(|(&m, &q)| m + T::lit(q as f64)).collect();
            symbols.push(sym);
            Ok(Tensor::new(mu.shape().to_vec(), v)?)
        };
        let stages = self.entropy_pass(&mut g, t, 1, &sizes, LatentSource::Decode(&mut decode))?;
        let x_hat = self.decoder_pass(&mut g, &stages.iter().map(StageVars::decoder_input).collect::<Vec<_>>(), t, &sizes)?;
        Ok(Self::collect(&g, &stages, x_hat, symbols))
    }
}
