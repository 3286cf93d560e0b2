//! Dataset ingestion: MNIST IDX files, CIFAR binary batches and a seeded
//! two-Gaussian toy problem.

use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use weightmom_core::data::Dataset;
use weightmom_core::seeded_rng;

use crate::config::{DatasetKind, ExperimentConfig};
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const CIFAR_PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn record_len(&self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1 + CIFAR_PIXELS,
            CifarVariant::Cifar100 => 2 + CIFAR_PIXELS,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Decoded IDX payload: the magic, dimension sizes and raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            Error::format(
                path,
                format!(
                    "truncated header at byte offset {offset}: file has {} bytes",
                    bytes.len()
                ),
            )
        })
}

/// Parses an unsigned-byte IDX file (`0x00000801` labels or `0x00000803` images).
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0, path)?;
    let rank = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        _ => {
            return Err(Error::format(
                path,
                format!("bad IDX magic 0x{magic:08x} at byte offset 0"),
            ))
        }
    };
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes for dims {dims:?}, found {} (payload starts at byte offset {header})",
                bytes.len()
            ),
        ));
    }
    Ok(IdxArray {
        magic,
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&read(path)?, path)
}

/// Pairs an IDX image file with its label file. Samples are `1×rows×cols`
/// with pixels scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(images, "not an IDX image file"));
    }
    if lab.magic != IDX_LABELS_MAGIC {
        return Err(Error::format(labels, "not an IDX label file"));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::format(
            labels,
            format!("{} labels for {} images", lab.dims[0], img.dims[0]),
        ));
    }
    if let Some(i) = lab.data.iter().position(|&l| l >= 10) {
        return Err(Error::format(
            labels,
            format!(
                "label {} at byte offset {} is not a digit",
                lab.data[i],
                8 + i
            ),
        ));
    }
    let features = img.data.iter().map(|&b| b as f32 / 255.0).collect();
    let labels_u32 = lab.data.iter().map(|&l| l as u32).collect();
    Ok(Dataset::new(
        vec![1, img.dims[1], img.dims[2]],
        features,
        labels_u32,
        10,
    )?)
}

/// Parses CIFAR binary records. CIFAR-100 records carry
/// `(coarse, fine)` label bytes; the fine label is used.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant, path: &Path) -> Result<Dataset> {
    let rec = variant.record_len();
    if bytes.is_empty() || !bytes.len().is_multiple_of(rec) {
        return Err(Error::format(
            path,
            format!(
                "length {} is not a multiple of the {rec}-byte record size",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / rec;
    let mut features = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    let label_at = rec - CIFAR_PIXELS - 1;
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let label = r[label_at] as usize;
        if label >= variant.classes() {
            return Err(Error::format(
                path,
                format!(
                    "label {label} of record {i} (byte offset {}) exceeds {} classes",
                    i * rec + label_at,
                    variant.classes()
                ),
            ));
        }
        labels.push(label as u32);
        features.extend(r[rec - CIFAR_PIXELS..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(Dataset::new(
        vec![3, 32, 32],
        features,
        labels,
        variant.classes(),
    )?)
}

pub fn load_cifar(path: &Path, variant: CifarVariant) -> Result<Dataset> {
    parse_cifar(&read(path)?, variant, path)
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let first = parts.first().expect("at least one part");
    let shape = first.sample_shape().to_vec();
    let classes = first.num_classes();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for p in &parts {
        features.extend_from_slice(p.features());
        labels.extend_from_slice(p.labels());
    }
    Ok(Dataset::new(shape, features, labels, classes)?)
}

fn locate(dir: &Path, candidates: &[&str]) -> Result<PathBuf> {
    candidates
        .iter()
        .map(|c| dir.join(c))
        .find(|p| p.exists())
        .ok_or_else(|| Error::format(dir, format!("none of {candidates:?} found")))
}

/// Standard train/test splits from a dataset directory.
pub fn load_dir(kind: DatasetKind, dir: &Path) -> Result<(Dataset, Dataset)> {
    match kind {
        DatasetKind::Mnist => Ok((
            load_idx(
                &locate(dir, &["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?,
                &locate(dir, &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?,
            )?,
            load_idx(
                &locate(dir, &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"])?,
                &locate(dir, &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"])?,
            )?,
        )),
        DatasetKind::Cifar10 => {
            let root = if dir.join("cifar-10-batches-bin").is_dir() {
                dir.join("cifar-10-batches-bin")
            } else {
                dir.to_path_buf()
            };
            let train = (1..=5)
                .map(|i| {
                    load_cifar(
                        &root.join(format!("data_batch_{i}.bin")),
                        CifarVariant::Cifar10,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((
                concat(train)?,
                load_cifar(&root.join("test_batch.bin"), CifarVariant::Cifar10)?,
            ))
        }
        DatasetKind::Cifar100 => {
            let root = if dir.join("cifar-100-binary").is_dir() {
                dir.join("cifar-100-binary")
            } else {
                dir.to_path_buf()
            };
            Ok((
                load_cifar(&root.join("train.bin"), CifarVariant::Cifar100)?,
                load_cifar(&root.join("test.bin"), CifarVariant::Cifar100)?,
            ))
        }
        DatasetKind::Synthetic => Err(Error::Config(
            "the synthetic dataset has no directory".into(),
        )),
    }
}

/// Two classes drawn from unit-variance Gaussians centred at `±1` in every
/// coordinate, alternating labels.
pub fn two_gaussians(samples: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed, 0xDA7A);
    let noise = Normal::new(0.0f64, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(samples * dim);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = (i % 2) as u32;
        let centre = if label == 1 { 1.0 } else { -1.0 };
        features.extend((0..dim).map(|_| (centre + noise.sample(&mut rng)) as f32));
        labels.push(label);
    }
    Dataset::new(vec![dim], features, labels, 2).expect("well-formed synthetic data")
}

/// 80/20 train/test split of [`two_gaussians`].
pub fn synthetic_splits(samples: usize, seed: u64) -> (Dataset, Dataset) {
    let all = two_gaussians(samples, 8, seed);
    let n_train = samples * 4 / 5;
    let split = |range: std::ops::Range<usize>| {
        let feats = all.features()[range.start * 8..range.end * 8].to_vec();
        let labels = all.labels()[range].to_vec();
        Dataset::new(vec![8], feats, labels, 2).expect("subset of valid data")
    };
    (split(0..n_train), split(n_train..samples))
}

/// Train and test sets for an experiment, with any configured limits applied.
pub fn load_for(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = match cfg.dataset {
        DatasetKind::Synthetic => synthetic_splits(cfg.synthetic_samples, cfg.data_seed),
        kind => load_dir(kind, cfg.data_path.as_deref().expect("validated"))?,
    };
    if let Some(n) = cfg.train_limit {
        train.truncate(n);
    }
    if let Some(n) = cfg.test_limit {
        test.truncate(n);
    }
    Ok((train, test))
}
