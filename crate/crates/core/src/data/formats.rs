//! Decoders for the IDX (MNIST) and CIFAR binary formats.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a whole file, inflating it when the name ends in `.gz`.
pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    } else {
        file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    }
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses an IDX buffer with the given magic, returning (dims, payload).
fn parse_idx<'a>(bytes: &'a [u8], magic: u32, what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!("{what}: file too short for an IDX header ({} bytes)", bytes.len())));
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::Format(format!("{what}: bad IDX magic 0x{found:08x} (expected 0x{magic:08x})")));
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format(format!("{what}: truncated IDX header")));
    }
    let dims: Vec<usize> = (0..ndim).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{what}: IDX dims {dims:?} need {expected} bytes of data, file has {}",
            payload.len()
        )));
    }
    Ok((dims, payload))
}

pub(crate) fn pixels_to_unit(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32 / 255.0).collect()
}

/// Decodes an IDX image/label pair already in memory.
pub fn decode_mnist(images: &[u8], labels: &[u8], name: &str) -> Result<Dataset> {
    let (dims, pixels) = parse_idx(images, IDX_IMAGES_MAGIC, "images")?;
    let (ldims, label_bytes) = parse_idx(labels, IDX_LABELS_MAGIC, "labels")?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if ldims[0] != n {
        return Err(Error::Format(format!("{n} images but {} labels", ldims[0])));
    }
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    if let Some(bad) = labels.iter().find(|&&l| l >= 10) {
        return Err(Error::Format(format!("MNIST label {bad} out of range")));
    }
    let images = Tensor::new([n, 1, h, w], pixels_to_unit(pixels))?;
    Dataset::new(name, 10, images, labels)
}

pub fn load_mnist_idx(image_path: &Path, label_path: &Path) -> Result<Dataset> {
    let images = read_file(image_path)?;
    let labels = read_file(label_path)?;
    decode_mnist(&images, &labels, "mnist").map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", image_path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarKind {
    Cifar10,
    Cifar100,
}

impl CifarKind {
    pub fn record_len(self) -> usize {
        match self {
            CifarKind::Cifar10 => 1 + 3072,
            CifarKind::Cifar100 => 2 + 3072,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CifarKind::Cifar10 => "cifar10",
            CifarKind::Cifar100 => "cifar100",
        }
    }
}

/// Decodes concatenated CIFAR records (label byte(s) then R, G, B planes).
/// CIFAR-100 keeps the fine label.
pub fn decode_cifar(bytes: &[u8], kind: CifarKind) -> Result<Dataset> {
    let rec = kind.record_len();
    if bytes.len() % rec != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a multiple of the {rec}-byte {} record",
            bytes.len(),
            kind.name()
        )));
    }
    let n = bytes.len() / rec;
    let label_bytes = rec - 3072;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * 3072);
    for r in bytes.chunks_exact(rec) {
        let label = r[label_bytes - 1] as usize;
        if label >= kind.classes() {
            return Err(Error::Format(format!("{} label {label} out of range", kind.name())));
        }
        labels.push(label);
        pixels.extend(r[label_bytes..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(kind.name(), kind.classes(), Tensor::new([n, 3, 32, 32], pixels)?, labels)
}

pub fn load_cifar_bin(paths: &[PathBuf], kind: CifarKind) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for p in paths {
        let chunk = read_file(p)?;
        if chunk.len() % kind.record_len() != 0 {
            return Err(Error::Format(format!(
                "{}: length {} is not a multiple of the {}-byte record",
                p.display(),
                chunk.len(),
                kind.record_len()
            )));
        }
        bytes.extend_from_slice(&chunk);
    }
    decode_cifar(&bytes, kind)
}
