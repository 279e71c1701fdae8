use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use replaycodec::bitstream::{compatibility_report, decode_image, encode_image, EncodedImage};
use replaycodec::codec::ModelConfig;
use replaycodec::data::{gen_source_a, gen_source_b, load_ppm, write_ppm, BatchSampler};
use replaycodec::evaluation::{bd_rate, psnr, rd_sweep};
use replaycodec::training::{finetune, pretrain, ReplayBuffer, Strategy, TrainConfig};
use replaycodec::Model32;

fn trained(iterations: usize) -> Model32 {
    let mut model = Model32::new(ModelConfig::tiny()).unwrap();
    let cfg = TrainConfig { iterations, batch_size: 4, ..TrainConfig::pretrain(3) };
    pretrain(&cfg, &gen_source_a(11, 32).unwrap(), &mut model).unwrap();
    model
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained(30);
    let ckpt = dir.path().join("m.ckpt");
    model.save(&ckpt).unwrap();
    let loaded = Model32::load(&ckpt).unwrap();
    assert_eq!(loaded.fingerprint(), model.fingerprint());

    let image = gen_source_b(5, 1).unwrap().eval_images().remove(0);
    let ppm = dir.path().join("x.ppm");
    write_ppm(&ppm, &image).unwrap();
    let image = load_ppm(&ppm).unwrap();

    let stream = encode_image(&image, 300.0, &model).unwrap();
    let path = dir.path().join("x.ccbs");
    stream.save(&path).unwrap();
    let read = EncodedImage::load(&path).unwrap();
    assert_eq!(read, stream);
    let a = decode_image(&read, &loaded).unwrap();
    let b = decode_image(&stream, &model).unwrap();
    assert_eq!(a.image, b.image);
    assert!(psnr(&image, &a.image).unwrap() > 5.0);
}

#[test]
fn short_finetune_keeps_archived_streams_decodable() {
    let model = trained(40);
    let old_images = gen_source_a(21, 4).unwrap().eval_images();
    let streams: Vec<_> = old_images.iter().map(|im| encode_image(im, 100.0, &model).unwrap()).collect();
    let replay = ReplayBuffer::new(model.clone(), gen_source_a(11, 32).unwrap()).unwrap();
    for strategy in [Strategy::FtEnc, Strategy::FtEncDec, Strategy::Kr] {
        let mut tuned = model.clone();
        let cfg = TrainConfig { iterations: 10, batch_size: 2, ..TrainConfig::finetune(strategy, 1) };
        finetune(&cfg, &gen_source_b(12, 16).unwrap(), Some(&replay), &mut tuned).unwrap();
        let report = compatibility_report(&streams, &model, &tuned, &old_images);
        assert!(report.all_latents_equal(), "{strategy}");
        assert_eq!(report.failures(), 0);
    }
}

#[test]
fn rd_sweep_is_reproducible_and_self_bd_rate_is_zero() {
    let model = trained(60);
    let images = gen_source_a(31, 3).unwrap().eval_images();
    let grid = [32.0, 96.0, 300.0, 1024.0];
    let a = rd_sweep(&model, &images, &grid).unwrap();
    assert_eq!(a, rd_sweep(&model, &images, &grid).unwrap());
    assert!(a.points.windows(2).all(|w| w[1].bpp >= w[0].bpp));
    if let Ok(v) = bd_rate(&a, &a) {
        assert!(v.abs() < 1e-9);
    }
}

#[test]
fn sampler_batches_have_expected_shape() {
    let data = gen_source_a(1, 5).unwrap();
    let mut s = BatchSampler::new(&data, ChaCha8Rng::seed_from_u64(0));
    let b = s.next_batch(3).unwrap();
    assert_eq!(b.shape(), &[3, 3, 32, 32]);
}
