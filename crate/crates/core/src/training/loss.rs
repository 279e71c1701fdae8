use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::codec::{DecoderInput, LatentSource, Model, Quantizer};
use crate::numerics::{Graph, Scalar, Tensor, Var};

/// Scalar summary of one training iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub lambda_mean: f64,
    /// Mean code length per image of each stage, in bits.
    pub rate_bits: Vec<f64>,
    /// Mean squared error of the new-data reconstruction.
    pub distortion: f64,
    pub loss_new: f64,
    pub loss_kr: f64,
    pub combined: f64,
}

impl LossBreakdown {
    pub fn rate_total(&self) -> f64 {
        self.rate_bits.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        [self.lambda_mean, self.distortion, self.loss_new, self.loss_kr, self.combined].iter().chain(&self.rate_bits).all(|v| v.is_finite())
    }
}

/// Rate-distortion term recorded on a graph.
#[derive(Clone, Debug)]
pub struct RdTerm {
    pub loss: Var,
    pub value: f64,
    pub rate_bits: Vec<f64>,
    pub distortion: f64,
}

/// Replay term recorded on a graph.
#[derive(Clone, Debug)]
pub struct KrTerm {
    pub loss: Var,
    pub value: f64,
    pub distortion: f64,
}

fn finite(term: &str, v: f64) -> Result<f64, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::NonFinite { term: term.to_string(), value: v })
    }
}

/// Batch mean of `bits / (H W) + λ · mse` with noise-quantized latents.
/// The rate is the continuous discretized-Gaussian code length.
pub fn rd_loss<T: Scalar>(g: &mut Graph<T>, model: &Model<T>, x: &Tensor<T>, lambdas: &[f64], noise: &mut ChaCha8Rng) -> Result<RdTerm, TrainError> {
    let [n, _, h, w] = x.dims4("rd_loss")?;
    if lambdas.len() != n {
        return Err(TrainError::Contract(format!("{} lambdas for a batch of {n}", lambdas.len())));
    }
    let sizes = model.config().stage_sizes(h, w)?;
    let t = model.lambda_input(g, lambdas)?;
    let xv = g.input(x.clone());
    let feats = model.encode_features(g, xv, t)?;
    let stages = model.entropy_pass(g, t, n, &sizes, LatentSource::Encode { h: &feats, quant: Quantizer::Noise(noise) })?;

    let mut rate_bits = Vec::with_capacity(stages.len());
    let mut total: Option<Var> = None;
    for s in &stages {
        let r = g.sub(s.z_hat, s.mu)?;
        let bits = g.gaussian_bits(r, s.sigma)?;
        let per = g.sum_per_sample(bits)?;
        rate_bits.push(finite("rate", g.value(per).data().iter().map(|b| b.as_f64()).sum::<f64>() / n as f64)?);
        total = Some(match total {
            None => per,
            Some(acc) => g.add(acc, per)?,
        });
    }
    let total = total.ok_or_else(|| TrainError::Contract("model has no stages".into()))?;
    let x_hat = model.decoder_pass(g, &stages.iter().map(|s| s.decoder_input()).collect::<Vec<_>>(), t, &sizes)?;
    let mse = g.mse_per_sample(x_hat, x)?;
    let distortion = finite("distortion", g.value(mse).data().iter().map(|v| v.as_f64()).sum::<f64>() / n as f64)?;

    let rate = g.dot(total, &vec![T::lit(1.0 / (n * h * w) as f64); n])?;
    let weights: Vec<T> = lambdas.iter().map(|&l| T::lit(l / n as f64)).collect();
    let dist = g.dot(mse, &weights)?;
    let loss = g.add(rate, dist)?;
    let value = finite("rd loss", g.value(loss).data()[0].as_f64())?;
    Ok(RdTerm { loss, value, rate_bits, distortion })
}

/// Batch mean of `λ · mse` of the current decoder applied to latents of
/// the frozen `old` model. Nothing upstream of the decoder is recorded on
/// `g`, so only decoder parameters can receive gradients.
pub fn loss_kr<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    old: &Model<T>,
    x: &Tensor<T>,
    lambdas: &[f64],
    noise: Option<&mut ChaCha8Rng>,
) -> Result<KrTerm, TrainError> {
    let [n, _, h, w] = x.dims4("loss_kr")?;
    if lambdas.len() != n {
        return Err(TrainError::Contract(format!("{} lambdas for a batch of {n}", lambdas.len())));
    }
    let sizes = old.config().stage_sizes(h, w)?;
    let (z_hat, e): (Vec<Tensor<T>>, Vec<Tensor<T>>) = {
        let mut og = Graph::new();
        let t = old.lambda_input(&mut og, lambdas)?;
        let xv = og.input(x.clone());
        let feats = old.encode_features(&mut og, xv, t)?;
        let quant = match noise {
            Some(rng) => Quantizer::Noise(rng),
            None => Quantizer::Round,
        };
        let stages = old.entropy_pass(&mut og, t, n, &sizes, LatentSource::Encode { h: &feats, quant })?;
        stages.iter().map(|s| (og.value(s.z_hat).clone(), og.value(s.e).clone())).unzip()
    };
    let inputs: Vec<DecoderInput> = z_hat.into_iter().zip(e).map(|(z, e)| DecoderInput { z_hat: g.input(z), e: g.input(e) }).collect();
    let t = model.lambda_input(g, lambdas)?;
    let x_hat = model.decoder_pass(g, &inputs, t, &sizes)?;
    let mse = g.mse_per_sample(x_hat, x)?;
    let distortion = finite("replay distortion", g.value(mse).data().iter().map(|v| v.as_f64()).sum::<f64>() / n as f64)?;
    let weights: Vec<T> = lambdas.iter().map(|&l| T::lit(l / n as f64)).collect();
    let loss = g.dot(mse, &weights)?;
    let value = finite("kr loss", g.value(loss).data()[0].as_f64())?;
    Ok(KrTerm { loss, value, distortion })
}

/// `(1 - α) ℓ_new + α ℓ_KR`.
pub fn combined_loss(loss_new: f64, loss_kr: f64, alpha: f64) -> Result<f64, TrainError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TrainError::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok((1.0 - alpha) * loss_new + alpha * loss_kr)
}
