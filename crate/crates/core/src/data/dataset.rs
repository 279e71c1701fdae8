use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sources::{canvas_rng, source_a_canvas, source_b_canvas};
use super::{load_ppm, stack, DataError, Image};
use crate::numerics::Tensor;

pub const CROP: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    SourceA,
    SourceB,
    Directory,
}

impl std::str::FromStr for SourceKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "source_a" | "a" => Ok(SourceKind::SourceA),
            "source_b" | "b" => Ok(SourceKind::SourceB),
            "directory" | "dir" => Ok(SourceKind::Directory),
            _ => Err(DataError::Spec(format!("unknown source `{s}`"))),
        }
    }
}

/// Reproducible description of a dataset; one line of a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: SourceKind,
    pub seed: u64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn new(kind: SourceKind, seed: u64, count: usize) -> Self {
        DatasetSpec { kind, seed, count, path: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub datasets: Vec<DatasetSpec>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Spec(e.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct ImageDataset {
    spec: DatasetSpec,
    canvases: Vec<Image>,
    pub crop: usize,
    pub random_crop: bool,
    pub hflip: bool,
}

pub fn gen_source_a(seed: u64, n: usize) -> Result<ImageDataset, DataError> {
    ImageDataset::generate(&DatasetSpec::new(SourceKind::SourceA, seed, n))
}

pub fn gen_source_b(seed: u64, n: usize) -> Result<ImageDataset, DataError> {
    ImageDataset::generate(&DatasetSpec::new(SourceKind::SourceB, seed, n))
}

impl ImageDataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self, DataError> {
        if spec.count == 0 && spec.kind != SourceKind::Directory {
            return Err(DataError::Spec("dataset needs at least one image".into()));
        }
        let canvases: Vec<Image> = match spec.kind {
            SourceKind::SourceA => (0..spec.count as u64).map(|i| source_a_canvas(spec.seed, i)).collect(),
            SourceKind::SourceB => (0..spec.count as u64).map(|i| source_b_canvas(spec.seed, i)).collect(),
            SourceKind::Directory => {
                let dir = spec.path.as_ref().ok_or_else(|| DataError::Spec("directory dataset without a path".into()))?;
                let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
                    .collect();
                files.sort();
                if spec.count > 0 {
                    files.truncate(spec.count);
                }
                files.iter().map(|p| load_ppm(p)).collect::<Result<_, _>>()?
            }
        };
        if canvases.is_empty() {
            return Err(DataError::Spec("dataset is empty".into()));
        }
        if let Some(small) = canvases.iter().find(|c| c.height() < CROP || c.width() < CROP) {
            return Err(DataError::Shape(format!("image {}x{} is smaller than the {CROP} crop", small.height(), small.width())));
        }
        Ok(ImageDataset { spec: spec.clone(), canvases, crop: CROP, random_crop: true, hflip: true })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.canvases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canvases.is_empty()
    }

    pub fn canvases(&self) -> &[Image] {
        &self.canvases
    }

    /// Deterministic evaluation views: centre crops, no flips.
    pub fn eval_images(&self) -> Vec<Image> {
        self.canvases.iter().map(|c| c.center_crop(self.crop).expect("canvas not smaller than crop")).collect()
    }

    /// Visiting order of epoch `epoch`, a pure function of (seed, epoch).
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut rng = canvas_rng(self.spec.seed, 3, epoch);
        let mut order: Vec<usize> = (0..self.canvases.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    fn augment(&self, canvas: &Image, rng: &mut ChaCha8Rng) -> Image {
        let (top, left) = if self.random_crop {
            (rng.gen_range(0..=canvas.height() - self.crop), rng.gen_range(0..=canvas.width() - self.crop))
        } else {
            ((canvas.height() - self.crop) / 2, (canvas.width() - self.crop) / 2)
        };
        let flip = self.hflip && rng.gen::<bool>();
        canvas.crop(top, left, self.crop, flip).expect("crop inside canvas")
    }
}

/// Epoch-ordered augmented batches. Augmentation draws from its own
/// generator, never from the data-generation streams.
pub struct BatchSampler<'a> {
    data: &'a ImageDataset,
    rng: ChaCha8Rng,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> BatchSampler<'a> {
    pub fn new(data: &'a ImageDataset, rng: ChaCha8Rng) -> Self {
        let order = data.epoch_order(0);
        BatchSampler { data, rng, epoch: 0, order, cursor: 0 }
    }

    pub fn next_batch(&mut self, size: usize) -> Result<Tensor<f32>, DataError> {
        let mut images = Vec::with_capacity(size);
        for _ in 0..size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.order = self.data.epoch_order(self.epoch);
                self.cursor = 0;
            }
            let canvas = &self.data.canvases[self.order[self.cursor]];
            self.cursor += 1;
            images.push(self.data.augment(canvas, &mut self.rng));
        }
        stack(&images.iter().collect::<Vec<_>>())
    }
}
