use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{combined_loss, loss_kr, rd_loss};
use super::{sample_lambdas, LambdaDistribution, LossBreakdown, ReplayMix, Strategy, TrainConfig, TrainError};
use crate::codec::Model;
use crate::data::{BatchSampler, ImageDataset};
use crate::numerics::{adam_step, Graph, OptimizerState, Var};

/// Frozen snapshot of the pre-trained model together with its training
/// data and λ distribution.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    old: Model<f32>,
    data: ImageDataset,
    lambdas: LambdaDistribution,
}

impl ReplayBuffer {
    /// λ follows the pre-training range stored in the old model's config.
    pub fn new(mut old: Model<f32>, data: ImageDataset) -> Result<Self, TrainError> {
        old.store_mut().set_trainable_groups(&[]);
        let lambdas = LambdaDistribution::new(old.config().lambda_low, old.config().lambda_high)?;
        Ok(ReplayBuffer { old, data, lambdas })
    }

    pub fn old(&self) -> &Model<f32> {
        &self.old
    }

    pub fn data(&self) -> &ImageDataset {
        &self.data
    }

    pub fn lambdas(&self) -> &LambdaDistribution {
        &self.lambdas
    }
}

/// Per-iteration loss records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LossBreakdown>,
}

impl TrainLog {
    pub const HEADER: &'static str = "iter,lambda_mean,R_bits,D,l_new,l_kr,combined";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{},{},{},{}", r.lambda_mean, r.rate_total(), r.distortion, r.loss_new, r.loss_kr, r.combined);
        }
        s
    }

    /// Mean combined loss over rows `[start, end)`.
    pub fn mean_combined(&self, start: usize, end: usize) -> f64 {
        let rows = &self.rows[start.min(self.rows.len())..end.min(self.rows.len())];
        rows.iter().map(|r| r.combined).sum::<f64>() / rows.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    /// Exponential moving average of the weights, when enabled.
    pub ema: Option<Model<f32>>,
}

/// Independent generators derived from the training seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

const STREAM_LAMBDA: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_REPLAY_AUGMENT: u64 = 4;
const STREAM_REPLAY_LAMBDA: u64 = 5;
const STREAM_REPLAY_NOISE: u64 = 6;

/// Trains every group of a fresh model on the rate-distortion loss.
pub fn pretrain(cfg: &TrainConfig, data: &ImageDataset, model: &mut Model<f32>) -> Result<TrainOutcome, TrainError> {
    if cfg.strategy != Strategy::Pretrain {
        return Err(TrainError::Config(format!("pretrain called with strategy {}", cfg.strategy)));
    }
    run(cfg, data, None, model)
}

/// Fine-tunes `model` in place with the entropy model frozen. On error the
/// model holds the parameters of the last completed iteration.
pub fn finetune(cfg: &TrainConfig, new_data: &ImageDataset, replay: Option<&ReplayBuffer>, model: &mut Model<f32>) -> Result<TrainOutcome, TrainError> {
    if cfg.strategy == Strategy::Pretrain {
        return Err(TrainError::Config("finetune needs a fine-tuning strategy".into()));
    }
    let before = model.fingerprint();
    let out = run(cfg, new_data, replay, model)?;
    if model.fingerprint() != before {
        return Err(TrainError::Contract("entropy model changed during fine-tuning".into()));
    }
    Ok(out)
}

fn run(cfg: &TrainConfig, data: &ImageDataset, replay: Option<&ReplayBuffer>, model: &mut Model<f32>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let replay = match (cfg.strategy, replay) {
        (Strategy::Kr, None) => return Err(TrainError::Contract("strategy kr needs a replay buffer".into())),
        (Strategy::Kr, Some(r)) => Some(r),
        _ => None,
    };
    let new_lambdas = LambdaDistribution::new(cfg.lambda_low, cfg.lambda_high)?;
    model.store_mut().set_trainable_groups(cfg.strategy.trainable_groups());

    let mut lambda_rng = stream(cfg.seed, STREAM_LAMBDA);
    let mut noise_rng = stream(cfg.seed, STREAM_NOISE);
    let mut sampler = BatchSampler::new(data, stream(cfg.seed, STREAM_AUGMENT));
    let mut replay_lambda_rng = stream(cfg.seed, STREAM_REPLAY_LAMBDA);
    let mut replay_noise_rng = stream(cfg.seed, STREAM_REPLAY_NOISE);
    let mut replay_sampler = replay.map(|r| BatchSampler::new(&r.data, stream(cfg.seed, STREAM_REPLAY_AUGMENT)));

    let (n_new, n_kr, alpha) = match (replay, cfg.replay_mix) {
        (None, _) => (cfg.batch_size, 0, 0.0),
        (Some(_), ReplayMix::TwoBatch) => {
            let a = cfg.alpha;
            (if a < 1.0 { cfg.batch_size } else { 0 }, if a > 0.0 { cfg.batch_size } else { 0 }, a)
        }
        (Some(_), ReplayMix::SplitBatch) => {
            let k = (cfg.alpha * cfg.batch_size as f64).round() as usize;
            (cfg.batch_size - k, k, k as f64 / cfg.batch_size as f64)
        }
    };

    let mut opt = OptimizerState::new(model.store(), cfg.lr, cfg.grad_clip);
    let mut ema = cfg.ema_decay.map(|_| model.clone());
    let mut log = TrainLog { rows: Vec::with_capacity(cfg.iterations) };
    let diverged = |iter: usize, e: TrainError| match e {
        TrainError::NonFinite { term, value } => TrainError::Diverged { iter, term, value },
        e => e,
    };

    for iter in 0..cfg.iterations {
        opt.lr = cfg.lr * cfg.schedule.factor(iter, cfg.iterations);
        let mut g = Graph::new();
        let mut row = LossBreakdown::default();
        let mut lambda_sum = 0.0;
        let mut terms: Vec<(Var, f64)> = Vec::with_capacity(2);

        if n_new > 0 {
            let x = sampler.next_batch(n_new)?;
            let lambdas = sample_lambdas(&new_lambdas, n_new, &mut lambda_rng);
            lambda_sum += lambdas.iter().sum::<f64>();
            let t = rd_loss(&mut g, model, &x, &lambdas, &mut noise_rng).map_err(|e| diverged(iter, e))?;
            row.rate_bits = t.rate_bits;
            row.distortion = t.distortion;
            row.loss_new = t.value;
            terms.push((t.loss, 1.0 - alpha));
        }
        if let (Some(r), Some(rs)) = (replay, replay_sampler.as_mut()) {
            if n_kr > 0 {
                let x = rs.next_batch(n_kr)?;
                let lambdas = sample_lambdas(&r.lambdas, n_kr, &mut replay_lambda_rng);
                lambda_sum += lambdas.iter().sum::<f64>();
                let noise = cfg.replay_noise.then_some(&mut replay_noise_rng);
                let t = loss_kr(&mut g, model, &r.old, &x, &lambdas, noise).map_err(|e| diverged(iter, e))?;
                row.loss_kr = t.value;
                terms.push((t.loss, alpha));
            }
        }
        row.lambda_mean = lambda_sum / (n_new + n_kr) as f64;
        row.combined = if replay.is_some() { combined_loss(row.loss_new, row.loss_kr, alpha)? } else { row.loss_new };

        let root = match terms.as_slice() {
            [(v, _)] => *v,
            [(a, wa), (b, wb)] => {
                let a = g.scale(*a, *wa as f32);
                let b = g.scale(*b, *wb as f32);
                g.add(a, b)?
            }
            _ => return Err(TrainError::Contract("iteration has no loss term".into())),
        };
        let mut grads = g.backward(root, model.store().len())?;
        drop(g);
        // Trainable parameters the loss does not reach have zero gradient.
        let unreached: Vec<_> = model.store().iter().filter(|(id, p)| p.trainable && grads.get(*id).is_none()).map(|(id, p)| (id, p.tensor.numel())).collect();
        for (id, numel) in unreached {
            grads.ensure_zero(id, numel);
        }
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(TrainError::Diverged { iter, term: "gradient".into(), value: norm });
        }
        adam_step(model.store_mut(), &grads, &mut opt)?;

        if let (Some(shadow), Some(d)) = (ema.as_mut(), cfg.ema_decay) {
            let d = d as f32;
            let src: Vec<_> = model.store().iter().map(|(id, p)| (id, p.tensor.data().to_vec())).collect();
            for (id, values) in src {
                for (s, v) in shadow.store_mut().tensor_mut(id).data_mut().iter_mut().zip(values) {
                    *s = d * *s + (1.0 - d) * v;
                }
            }
        }
        log.rows.push(row);
    }
    Ok(TrainOutcome { log, ema })
}
