use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::codec::{Model, ModelConfig};
use crate::data::{gen_source_a, gen_source_b, stack, ImageDataset};
use crate::numerics::gradcheck::{self, GradCheckConfig};
use crate::numerics::{Graph, Group, Tensor};

fn batch(n: usize) -> Tensor<f32> {
    let d = gen_source_a(5, n).unwrap();
    let ims = d.eval_images();
    stack(&ims.iter().collect::<Vec<_>>()).unwrap()
}

fn quick(strategy: Strategy, iterations: usize) -> TrainConfig {
    let mut c = if strategy == Strategy::Pretrain { TrainConfig::pretrain(3) } else { TrainConfig::finetune(strategy, 3) };
    c.iterations = iterations;
    c.batch_size = 2;
    c
}

fn micro() -> Model<f32> {
    Model::new(ModelConfig::micro()).unwrap()
}

#[test]
fn untrained_loss_terms_are_positive() {
    let m = micro();
    let mut g = Graph::new();
    let t = rd_loss(&mut g, &m, &batch(2), &[100.0, 300.0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(t.rate_bits.len(), 2);
    assert!(t.rate_bits.iter().all(|&b| b > 0.0));
    assert!(t.distortion > 0.0);
}

#[test]
fn vanishing_lambda_leaves_the_rate() {
    let m = micro();
    let mut g = Graph::new();
    let t = rd_loss(&mut g, &m, &batch(2), &[1e-12, 1e-12], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let bpp = t.rate_bits.iter().sum::<f64>() / (32.0 * 32.0);
    assert!((t.value - bpp).abs() < 1e-6 * bpp.max(1.0));
}

#[test]
fn full_loss_matches_finite_differences() {
    let m = Model::<f64>::new(ModelConfig::micro()).unwrap();
    assert!(m.store().count(None) <= 5000, "{}", m.store().count(None));
    let x = Tensor::new(vec![2, 3, 8, 8], (0..384).map(|i| 0.5 + 0.4 * ((i as f64) * 0.61).sin()).collect()).unwrap();
    let report = gradcheck::check(m.store(), GradCheckConfig::default(), |g, s| {
        let mut probe = m.clone();
        *probe.store_mut() = s.clone();
        let t = rd_loss(g, &probe, &x, &[40.0, 700.0], &mut ChaCha8Rng::seed_from_u64(9)).map_err(|e| match e {
            TrainError::Numerics(e) => e,
            e => crate::numerics::NumericsError::Contract(e.to_string()),
        })?;
        Ok(t.loss)
    })
    .unwrap();
    assert_eq!(report.checked, m.store().count(None));
    assert!(report.max_rel_err < 1e-3, "{:?} {}", report.worst, report.max_rel_err);
}

#[test]
fn frozen_entropy_model_gets_no_gradient() {
    let mut m = micro();
    m.store_mut().set_trainable_groups(&[Group::Enc, Group::Dec]);
    let mut g = Graph::new();
    let t = rd_loss(&mut g, &m, &batch(2), &[50.0, 50.0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let grads = g.backward(t.loss, m.store().len()).unwrap();
    for (id, p) in m.store().iter() {
        assert_eq!(grads.get(id).is_some(), p.group != Group::Pz, "{}", p.name);
    }
}

#[test]
fn replay_loss_starts_at_old_distortion_and_reaches_only_the_decoder() {
    let old = micro();
    let mut m = old.clone();
    m.store_mut().set_trainable_groups(&[Group::Enc, Group::Dec, Group::Pz]);
    let x = batch(2);
    let lambdas = [64.0, 512.0];
    let mut g = Graph::new();
    let t = loss_kr(&mut g, &m, &old, &x, &lambdas, None).unwrap();
    assert!(t.value >= 0.0);
    let mut expected = 0.0;
    for (i, l) in lambdas.iter().enumerate() {
        let xi = Tensor::new(vec![1, 3, 32, 32], x.data()[i * 3072..(i + 1) * 3072].to_vec()).unwrap();
        let a = old.analyze(&xi, *l).unwrap();
        let mse = a.x_hat.data().iter().zip(xi.data()).map(|(p, q)| ((p - q) as f64).powi(2)).sum::<f64>() / 3072.0;
        expected += l * mse / 2.0;
    }
    assert!((t.value - expected).abs() < 1e-4 * expected, "{} vs {expected}", t.value);
    let grads = g.backward(t.loss, m.store().len()).unwrap();
    for (id, p) in m.store().iter() {
        assert_eq!(grads.get(id).is_some(), p.group == Group::Dec, "{}", p.name);
    }
}

#[test]
fn combined_loss_weights() {
    assert_eq!(combined_loss(2.0, 4.0, 0.0).unwrap(), 2.0);
    assert_eq!(combined_loss(2.0, 4.0, 1.0).unwrap(), 4.0);
    assert_eq!(combined_loss(2.0, 4.0, 0.5).unwrap(), 3.0);
    assert!(matches!(combined_loss(2.0, 4.0, -0.1), Err(TrainError::Domain(_))));
}

fn datasets() -> (ImageDataset, ImageDataset) {
    (gen_source_a(1, 8).unwrap(), gen_source_b(2, 8).unwrap())
}

#[test]
fn pretraining_moves_the_entropy_model() {
    let (a, _) = datasets();
    let mut m = micro();
    let before = m.fingerprint();
    let out = pretrain(&quick(Strategy::Pretrain, 3), &a, &mut m).unwrap();
    assert_eq!(out.log.rows.len(), 3);
    assert_ne!(m.fingerprint(), before);
}

#[test]
fn fine_tuning_keeps_the_entropy_model() {
    let (a, b) = datasets();
    let base = micro();
    let replay = ReplayBuffer::new(base.clone(), a).unwrap();
    for s in [Strategy::FtEnc, Strategy::FtEncDec, Strategy::Kr] {
        let mut m = base.clone();
        let out = finetune(&quick(s, 3), &b, Some(&replay), &mut m).unwrap();
        assert_eq!(m.fingerprint(), base.fingerprint(), "{s}");
        assert!(out.log.rows.iter().all(LossBreakdown::is_finite));
        let changed = |group: Group| m.store().iter().zip(base.store().iter()).any(|((_, p), (_, q))| p.group == group && p.tensor != q.tensor);
        assert!(changed(Group::Enc), "{s}");
        assert_eq!(changed(Group::Dec), s != Strategy::FtEnc, "{s}");
    }
}

#[test]
fn full_replay_leaves_the_encoder() {
    let (a, b) = datasets();
    let base = micro();
    let replay = ReplayBuffer::new(base.clone(), a).unwrap();
    let mut c = quick(Strategy::Kr, 3);
    c.alpha = 1.0;
    let mut m = base.clone();
    let out = finetune(&c, &b, Some(&replay), &mut m).unwrap();
    assert!(out.log.rows.iter().all(|r| r.loss_kr > 0.0 && r.combined == r.loss_kr));
    for ((_, p), (_, q)) in m.store().iter().zip(base.store().iter()) {
        assert_eq!(p.tensor != q.tensor, p.group == Group::Dec, "{}", p.name);
    }
}

#[test]
fn split_batch_mix_runs() {
    let (a, b) = datasets();
    let base = micro();
    let replay = ReplayBuffer::new(base.clone(), a).unwrap();
    let mut c = quick(Strategy::Kr, 2);
    c.batch_size = 4;
    c.replay_mix = ReplayMix::SplitBatch;
    let mut m = base.clone();
    let out = finetune(&c, &b, Some(&replay), &mut m).unwrap();
    assert!(out.log.rows.iter().all(|r| r.loss_new > 0.0 && r.loss_kr > 0.0));
}

#[test]
fn replay_requires_a_buffer() {
    let (_, b) = datasets();
    let mut m = micro();
    assert!(matches!(finetune(&quick(Strategy::Kr, 1), &b, None, &mut m), Err(TrainError::Contract(_))));
    assert!(matches!(finetune(&quick(Strategy::Pretrain, 1), &b, None, &mut m), Err(TrainError::Config(_))));
}

#[test]
fn same_seed_same_trajectory() {
    let (a, _) = datasets();
    let c = quick(Strategy::Pretrain, 100);
    let run = || {
        let mut m = micro();
        pretrain(&c, &a, &mut m).unwrap().log
    };
    let first = run();
    assert_eq!(first.rows.len(), 100);
    assert_eq!(first, run());
    assert_eq!(first.to_csv().lines().next().unwrap(), TrainLog::HEADER);
    assert_eq!(first.to_csv().lines().count(), 101);
}

#[test]
fn divergence_aborts_with_last_good_parameters() {
    let (a, _) = datasets();
    let mut m = micro();
    let id = m.store().id("dec.out.bias").unwrap();
    m.store_mut().tensor_mut(id).data_mut()[0] = f32::NAN;
    let snapshot = m.store().values_flat();
    let err = pretrain(&quick(Strategy::Pretrain, 5), &a, &mut m).unwrap_err();
    assert!(matches!(err, TrainError::Diverged { iter: 0, .. }), "{err}");
    let after = m.store().values_flat();
    assert!(snapshot.iter().zip(&after).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn ema_shadow_is_returned() {
    let (a, _) = datasets();
    let mut m = micro();
    let mut c = quick(Strategy::Pretrain, 3);
    c.ema_decay = Some(0.5);
    let out = pretrain(&c, &a, &mut m).unwrap();
    let ema = out.ema.unwrap();
    assert_ne!(ema.store().values_flat(), m.store().values_flat());
}
