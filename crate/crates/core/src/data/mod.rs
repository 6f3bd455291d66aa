//! Datasets: loading, normalization, validation splits and batching.

mod formats;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use formats::{decode_cifar, decode_mnist, load_cifar_bin, load_mnist_idx, CifarKind, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::Tensor;

/// Environment variable naming the data directory.
pub const DATA_DIR_ENV: &str = "IRCNN_DATA_DIR";

/// Guard added under a zero standard deviation.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub classes: usize,
    /// `(N, C, H, W)`, pixels in `[0, 1]` until normalized.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, classes: usize, images: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        if images.shape().n != labels.len() {
            return Err(Error::Data(format!("{} images but {} labels", images.shape().n, labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset { name: name.into(), classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            classes: self.classes,
            images: self.images.select_samples(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// SHA-256 over the decoded buffers: every pixel as little-endian f32,
    /// then every label as little-endian u32.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.images.data() {
            h.update(v.to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u32).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.classes];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// Deterministic stand-in data: each class lights a distinct 3x3 patch
    /// on a noisy background. Small enough for fast end-to-end runs.
    pub fn synthetic(n: usize, channels: usize, size: usize, classes: usize, seed: u64) -> Result<Dataset> {
        if size < 6 || classes == 0 {
            return Err(Error::Config(format!("synthetic data needs size >= 6 and classes > 0, got {size} / {classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let cells = size - 2;
        let mut images = Tensor::from_fn([n, channels, size, size], |_| rng.random_range(0.0..0.3f32));
        for (i, &label) in labels.iter().enumerate() {
            let pos = label * 7919 % (cells * cells);
            let (top, left) = (pos / cells, pos % cells);
            for c in 0..channels {
                for dy in 0..3 {
                    for dx in 0..3 {
                        images.set(i, c, top + dy, left + dx, 1.0);
                    }
                }
            }
        }
        Dataset::new("synthetic", classes, images, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl DatasetKind {
    /// Files expected under the data directory for a split.
    pub fn files(self, dir: &Path, split: Split) -> Vec<PathBuf> {
        match (self, split) {
            (DatasetKind::Mnist, Split::Train) => {
                vec![dir.join("mnist/train-images-idx3-ubyte"), dir.join("mnist/train-labels-idx1-ubyte")]
            }
            (DatasetKind::Mnist, Split::Test) => {
                vec![dir.join("mnist/t10k-images-idx3-ubyte"), dir.join("mnist/t10k-labels-idx1-ubyte")]
            }
            (DatasetKind::Cifar10, Split::Train) => {
                (1..=5).map(|i| dir.join(format!("cifar-10-batches-bin/data_batch_{i}.bin"))).collect()
            }
            (DatasetKind::Cifar10, Split::Test) => vec![dir.join("cifar-10-batches-bin/test_batch.bin")],
            (DatasetKind::Cifar100, Split::Train) => vec![dir.join("cifar-100-binary/train.bin")],
            (DatasetKind::Cifar100, Split::Test) => vec![dir.join("cifar-100-binary/test.bin")],
            (DatasetKind::Synthetic, _) => Vec::new(),
        }
    }

    /// True when every file for both splits exists (a `.gz` sibling counts).
    pub fn available(self, dir: &Path) -> bool {
        [Split::Train, Split::Test]
            .iter()
            .flat_map(|&s| self.files(dir, s))
            .all(|p| resolve_gz(&p).is_some())
    }

    pub fn load(self, dir: &Path, split: Split) -> Result<Dataset> {
        let files = self
            .files(dir, split)
            .into_iter()
            .map(|p| {
                resolve_gz(&p).ok_or_else(|| {
                    Error::Data(format!("missing data file {} (set --data-dir or {DATA_DIR_ENV})", p.display()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match self {
            DatasetKind::Mnist => load_mnist_idx(&files[0], &files[1]),
            DatasetKind::Cifar10 => load_cifar_bin(&files, CifarKind::Cifar10),
            DatasetKind::Cifar100 => load_cifar_bin(&files, CifarKind::Cifar100),
            DatasetKind::Synthetic => Err(Error::Config("synthetic data is generated, not loaded".into())),
        }
    }
}

fn resolve_gz(p: &Path) -> Option<PathBuf> {
    if p.exists() {
        return Some(p.to_path_buf());
    }
    let mut gz = p.as_os_str().to_owned();
    gz.push(".gz");
    let gz = PathBuf::from(gz);
    gz.exists().then_some(gz)
}

/// Data directory: explicit flag, then the environment, then the config's
/// directory, then `./data`.
pub fn data_dir(flag: Option<&Path>, configured: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.map_or_else(|| PathBuf::from("data"), Path::to_path_buf),
    }
}

/// Per-channel standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(ds: &Dataset) -> Normalization {
        let s = ds.images.shape();
        let (mut sum, mut sq) = (vec![0.0f64; s.c], vec![0.0f64; s.c]);
        let plane = s.plane();
        for n in 0..s.n {
            for (c, chunk) in ds.images.sample(n).chunks(plane).enumerate() {
                for &v in chunk {
                    sum[c] += v as f64;
                }
            }
        }
        let count = (s.n * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|v| v / count).collect();
        for n in 0..s.n {
            for (c, chunk) in ds.images.sample(n).chunks(plane).enumerate() {
                for &v in chunk {
                    sq[c] += (v as f64 - mean[c]).powi(2);
                }
            }
        }
        let std = sq.iter().map(|v| (v / count).sqrt()).collect();
        Normalization { mean, std }
    }

    pub fn apply(&self, ds: &mut Dataset) -> Result<()> {
        let s = ds.images.shape();
        if s.c != self.mean.len() {
            return Err(Error::Data(format!("statistics for {} channels, data has {}", self.mean.len(), s.c)));
        }
        let plane = s.plane();
        for n in 0..s.n {
            for (c, chunk) in ds.images.sample_mut(n).chunks_mut(plane).enumerate() {
                let (m, sd) = (self.mean[c], self.std[c].max(NORM_EPS));
                for v in chunk {
                    *v = ((*v as f64 - m) / sd) as f32;
                }
            }
        }
        Ok(())
    }
}

/// Where validation samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ValSource {
    /// Reuse the test split as validation.
    TestAsVal,
    /// Hold out a seeded random fraction of the training split.
    Holdout { fraction: f64 },
}

impl Default for ValSource {
    fn default() -> Self {
        ValSource::Holdout { fraction: 0.1 }
    }
}

/// Splits `ds` into (train, holdout) with `round(fraction * N)` holdout
/// samples chosen by a seeded permutation. Both parts keep file order.
pub fn split_holdout(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let n_val = ((ds.len() as f64) * fraction).round() as usize;
    if n_val == 0 || n_val == ds.len() {
        return Err(Error::Config(format!("holdout of {fraction} leaves an empty split of {} samples", ds.len())));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut val, mut train) = (order[..n_val].to_vec(), order[n_val..].to_vec());
    val.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&val)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub horizontal_flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { horizontal_flip: true }
    }
}

pub const FLIP_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Dataset index of every sample.
    pub indices: Vec<usize>,
    pub flipped: Vec<bool>,
}

/// Batches for one epoch. Train mode permutes the samples and flips each
/// with probability 0.5, both drawn from a generator keyed by
/// `(seed, epoch)`; eval mode walks the data in order. Either way every
/// sample appears exactly once and the last batch may be partial.
#[derive(Debug)]
pub struct BatchIter<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    flips: Vec<bool>,
    batch: usize,
    pos: usize,
}

pub fn batch_iter(ds: &Dataset, batch: usize, seed: u64, epoch: u64, augment: AugmentConfig, mode: Mode) -> Result<BatchIter<'_>> {
    if batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut flips = vec![false; ds.len()];
    if mode == Mode::Train {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        if augment.horizontal_flip {
            flips.iter_mut().for_each(|f| *f = rng.random_bool(FLIP_PROBABILITY));
        }
    }
    Ok(BatchIter { ds, order, flips, batch, pos: 0 })
}

impl BatchIter<'_> {
    pub fn batches(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        let flipped = self.flips[self.pos..end].to_vec();
        self.pos = end;
        let mut images = self.ds.images.select_samples(&indices);
        let w = images.shape().w;
        for (i, &f) in flipped.iter().enumerate() {
            if f {
                images.sample_mut(i).chunks_mut(w).for_each(|row| row.reverse());
            }
        }
        let labels = indices.iter().map(|&i| self.ds.labels[i]).collect();
        Some(Batch { images, labels, indices, flipped })
    }
}
