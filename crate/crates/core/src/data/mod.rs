//! Synthetic image sources, datasets and PPM I/O.

mod dataset;
mod image;
mod ppm;
mod separability;
mod sources;

pub use dataset::{gen_source_a, gen_source_b, BatchSampler, DatasetSpec, ImageDataset, Manifest, SourceKind, CROP};
pub use image::{stack, Image};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, write_ppm};
pub use separability::{features, separability};
pub use sources::{horizontal_correlation, source_a_canvas, source_b_canvas, CANVAS};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: usize, detail: String },
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dataset spec: {0}")]
    Spec(String),
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn sources_are_reproducible_and_in_range() {
        let a = gen_source_a(7, 4).unwrap();
        assert_eq!(a.canvases(), gen_source_a(7, 4).unwrap().canvases());
        assert_ne!(a.canvases(), gen_source_a(8, 4).unwrap().canvases());
        let b = gen_source_b(7, 4).unwrap();
        assert_eq!(b.canvases(), gen_source_b(7, 4).unwrap().canvases());
        for im in a.canvases().iter().chain(b.canvases()) {
            assert!(im.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!((im.height(), im.width()), (48, 48));
        }
        // prefix stability: canvas i does not depend on the count
        assert_eq!(gen_source_a(7, 2).unwrap().canvases(), &a.canvases()[..2]);
    }

    #[test]
    fn source_a_is_spatially_correlated() {
        let a = gen_source_a(3, 16).unwrap();
        assert!(horizontal_correlation(a.canvases()) > 0.5);
    }

    #[test]
    fn sources_are_separable() {
        let a = gen_source_a(11, 100).unwrap().eval_images();
        let b = gen_source_b(12, 100).unwrap().eval_images();
        assert!(separability(&a, &b, 5) > 0.9);
    }

    #[test]
    fn batches_follow_epoch_order() {
        let d = gen_source_b(1, 5).unwrap();
        assert_eq!(d.epoch_order(3), d.epoch_order(3));
        let mut o = d.epoch_order(0);
        o.sort();
        assert_eq!(o, vec![0, 1, 2, 3, 4]);
        let rng = || rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut s1 = BatchSampler::new(&d, rng());
        let mut s2 = BatchSampler::new(&d, rng());
        for _ in 0..4 {
            let b = s1.next_batch(3).unwrap();
            assert_eq!(b.shape(), &[3, 3, 32, 32]);
            assert_eq!(b, s2.next_batch(3).unwrap());
        }
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest { datasets: vec![DatasetSpec::new(SourceKind::SourceA, 1, 10), DatasetSpec::new(SourceKind::SourceB, 2, 20)] };
        assert_eq!(Manifest::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn directory_source_reads_ppm_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = gen_source_a(1, 2).unwrap();
        for (i, im) in a.canvases().iter().enumerate() {
            write_ppm(&dir.path().join(format!("{i}.ppm")), im).unwrap();
        }
        let spec = DatasetSpec { kind: SourceKind::Directory, seed: 0, count: 0, path: Some(dir.path().into()) };
        let d = ImageDataset::generate(&spec).unwrap();
        assert_eq!(d.len(), 2);
        let err = d.canvases()[0].data().iter().zip(a.canvases()[0].data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(err <= 0.5 / 255.0 + 1e-6);
    }
}
