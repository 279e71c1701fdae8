use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{Graph, Group, Tensor};

fn image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let data = (0..3 * h * w).map(|i| (((i as u64 * 2654435761 + seed * 97) % 1000) as f32) / 1000.0).collect();
    Tensor::new(vec![1, 3, h, w], data).unwrap()
}

#[test]
fn default_pyramid_shapes() {
    let m = Model::<f32>::new(ModelConfig::default()).unwrap();
    let mut g = Graph::new();
    let t = m.lambda_input(&mut g, &[100.0]).unwrap();
    let x = g.input(image(1, 32, 32));
    let h = m.encode_features(&mut g, x, t).unwrap();
    assert_eq!(g.shape(h[1]), &[1, 64, 8, 8]);
    assert_eq!(g.shape(h[0]), &[1, 96, 4, 4]);

    let x = g.input(image(1, 64, 64));
    let h = m.encode_features(&mut g, x, t).unwrap();
    assert_eq!(g.shape(h[1]), &[1, 64, 16, 16]);
    assert_eq!(g.shape(h[0]), &[1, 96, 8, 8]);

    let x = g.input(image(1, 36, 32));
    assert!(m.encode_features(&mut g, x, t).is_err());
}

#[test]
fn entropy_model_is_lightweight() {
    for cfg in [ModelConfig::default(), ModelConfig::compact()] {
        let m = Model::<f32>::new(cfg).unwrap();
        assert!(m.pz_fraction() <= 0.25, "pz fraction {}", m.pz_fraction());
        let parts: usize = Group::ALL.iter().map(|&g| m.store().count(Some(g))).sum();
        assert_eq!(parts, m.store().count(None));
    }
    let heavy = ModelConfig { pz_budget: Some(0.25), ..ModelConfig::micro() };
    assert!(matches!(Model::<f32>::new(heavy), Err(CodecError::Config(_))));
}

#[test]
fn sequential_matches_parallel_size() {
    for base in [ModelConfig::default(), ModelConfig::compact()] {
        let par = Model::<f32>::new(base.clone()).unwrap();
        let seq = Model::<f32>::new(ModelConfig { variant: Variant::Sequential, ..base }).unwrap();
        let (a, b) = (par.store().count(None) as f64, seq.store().count(None) as f64);
        assert!((a - b).abs() / a < 0.05, "{a} vs {b}");
        assert!(seq.sequential_width() > 0);
    }
}

#[test]
fn analysis_and_synthesis_agree_bitwise() {
    for variant in [Variant::Parallel, Variant::Sequential] {
        let m = Model::<f32>::new(ModelConfig { variant, ..ModelConfig::compact() }).unwrap();
        let x = image(4, 32, 32);
        let a = m.analyze(&x, 300.0).unwrap();
        assert_eq!(a.symbols.len(), 2);
        assert_eq!(a.x_hat.shape(), x.shape());
        let mut it = a.symbols.clone().into_iter();
        let b = m.synthesize(32, 32, 300.0, |_, _, _| Ok(it.next().unwrap())).unwrap();
        assert_eq!(a, b);
        assert!(a.sigma.iter().all(|s| s.data().iter().all(|&v| v > 0.0)));
        assert_eq!(m.analyze(&x, 300.0).unwrap(), a);
    }
}

#[test]
fn fingerprint_tracks_only_the_entropy_model() {
    let m = Model::<f32>::new(ModelConfig::compact()).unwrap();
    let fp = m.fingerprint();
    let mut other = m.clone();
    for (id, p) in m.store().iter() {
        if p.group != Group::Pz {
            other.store_mut().tensor_mut(id).data_mut()[0] += 1.0;
        }
    }
    assert_eq!(other.fingerprint(), fp);
    let e0 = other.store().id("pz.e0").unwrap();
    let v = &mut other.store_mut().tensor_mut(e0).data_mut()[0];
    *v = f32::from_bits(v.to_bits() + 1);
    assert_ne!(other.fingerprint(), fp);
}

#[test]
fn checkpoint_round_trip_preserves_model() {
    let m = Model::<f32>::new(ModelConfig { variant: Variant::Sequential, ..ModelConfig::compact() }).unwrap();
    let bytes = m.to_checkpoint_bytes();
    let back = Model::<f32>::from_checkpoint_bytes(&bytes).unwrap();
    assert_eq!(back.to_checkpoint_bytes(), bytes);
    assert_eq!(back.fingerprint(), m.fingerprint());
    let other = Model::<f32>::new(ModelConfig::compact()).unwrap();
    assert!(Model::<f32>::from_parts(ModelConfig::default(), other.store().clone()).is_err());
}

#[test]
fn quantization_rules() {
    let mut q = Quantizer::Round;
    assert_eq!(quantize_residual(&[2.4f32, -1.5, 1.5, 0.49], &[0.0; 4], &mut q).unwrap(), vec![2.0, -2.0, 2.0, 0.0]);
    assert_eq!(quantize_residual(&[2.9f32], &[0.5], &mut q).unwrap(), vec![2.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z: Vec<f32> = (0..1000).map(|i| i as f32 * 0.01 - 5.0).collect();
    let zh = quantize_residual(&z, &z, &mut Quantizer::Noise(&mut rng)).unwrap();
    assert!(z.iter().zip(&zh).all(|(a, b)| (a - b).abs() < 0.5));
    assert!(z.iter().zip(&zh).any(|(a, b)| a != b));
}

#[test]
fn constant_images_are_resolution_independent() {
    // Away from borders a fully convolutional model sees the same context.
    let m = Model::<f32>::new(ModelConfig::compact()).unwrap();
    let small = m.analyze(&Tensor::filled(vec![1, 3, 32, 32], 0.4), 200.0).unwrap();
    let large = m.analyze(&Tensor::filled(vec![1, 3, 64, 64], 0.4), 200.0).unwrap();
    assert_eq!(small.z_hat[0].shape(), &[1, 8, 4, 4]);
    assert_eq!(large.z_hat[0].shape(), &[1, 8, 8, 8]);
    assert_eq!(large.z_hat[1].shape(), &[1, 8, 16, 16]);
}

#[test]
fn lambda_normalization() {
    let m = Model::<f32>::new(ModelConfig::micro()).unwrap();
    assert_eq!(m.normalized_lambda(32.0), 0.0);
    assert!((m.normalized_lambda(1024.0) - 1.0).abs() < 1e-12);
    assert!(m.normalized_lambda(4096.0) > 1.0);
    let mut g = Graph::new();
    assert!(m.lambda_input(&mut g, &[0.0]).is_err());
}
