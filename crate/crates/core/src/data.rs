//! Labeled datasets: IDX files, synthetic tasks, normalization, batching.

use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `[N, C, H, W]` images or `[N, F]` feature vectors.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    /// Statistics the images were normalized with, if any.
    pub stats: Option<ChannelStats>,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.ndim() < 2 || images.rows() != labels.len() {
            return Err(Error::shape("dataset", images.shape(), &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        Ok(LabeledDataset {
            images,
            labels,
            classes,
            split,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn channels(&self) -> usize {
        self.sample_shape()[0]
    }

    fn inner(&self) -> usize {
        self.sample_shape()[1..].iter().product()
    }

    /// First `n` samples (all if `n >= len`).
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            images: self.images.slice_rows(0, n),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (self.images.gather_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn channel_stats(&self) -> ChannelStats {
        let (c, inner) = (self.channels(), self.inner());
        let count = (self.len() * inner) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..self.len() {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += self.images.row(i)[ch * inner..(ch + 1) * inner].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for i in 0..self.len() {
            for (ch, v) in var.iter_mut().enumerate() {
                for &x in &self.images.row(i)[ch * inner..(ch + 1) * inner] {
                    *v += (x - mean[ch]).powi(2);
                }
            }
        }
        let std = var.iter().map(|v| (v / count).sqrt().max(1e-8)).collect();
        ChannelStats { mean, std }
    }

    pub fn normalize_with(&mut self, stats: &ChannelStats) -> Result<()> {
        let (c, inner) = (self.channels(), self.inner());
        if stats.mean.len() != c {
            return Err(Error::shape("normalize", &[stats.mean.len()], &[c]));
        }
        for i in 0..self.len() {
            let row = self.images.row_mut(i);
            for ch in 0..c {
                for x in &mut row[ch * inner..(ch + 1) * inner] {
                    *x = (*x - stats.mean[ch]) / stats.std[ch];
                }
            }
        }
        self.stats = Some(stats.clone());
        Ok(())
    }

    /// 2x2 average downsampling of image datasets.
    pub fn downsample2x(&self) -> Result<LabeledDataset> {
        let images = crate::ops::avgpool2d_forward(&self.images)?;
        Ok(LabeledDataset {
            images,
            ..self.clone()
        })
    }

    /// Zero-pads every image side by `pad` pixels.
    pub fn pad(&self, pad: usize) -> Result<LabeledDataset> {
        let s = self.images.shape();
        if s.len() != 4 {
            return Err(Error::shape("pad", s, &[0, 0, 0, 0]));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        for i in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    let src = ((i * c + ch) * h + y) * w;
                    let dst = ((i * c + ch) * oh + y + pad) * ow + pad;
                    out.data_mut()[dst..dst + w].copy_from_slice(&self.images.data()[src..src + w]);
                }
            }
        }
        Ok(LabeledDataset {
            images: out,
            ..self.clone()
        })
    }
}

/// Fits statistics on `train` and applies them to both splits.
pub fn normalize_splits(train: &mut LabeledDataset, others: &mut [&mut LabeledDataset]) -> Result<ChannelStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stats = train.channel_stats();
    train.normalize_with(&stats)?;
    for ds in others {
        ds.normalize_with(&stats)?;
    }
    Ok(stats)
}

// ---------------------------------------------------------------- IDX

/// Decoded IDX payload of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let err = |msg: String| Error::format("IDX file", msg);
    if bytes.len() < 4 {
        return Err(err("truncated header".into()));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if magic >> 16 != 0 || (magic >> 8) & 0xff != 0x08 {
        return Err(err(format!("bad magic 0x{magic:08x} (expected unsigned-byte data)")));
    }
    let rank = (magic & 0xff) as usize;
    if rank == 0 {
        return Err(err("zero-rank array".into()));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(err("truncated dimension table".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= 1 << 34)
        .ok_or_else(|| err(format!("dimension overflow {dims:?}")))?;
    let payload = &bytes[header..];
    if payload.len() < numel {
        return Err(err(format!("truncated payload: {} of {numel} bytes", payload.len())));
    }
    if payload.len() > numel {
        return Err(err(format!("{} trailing bytes", payload.len() - numel)));
    }
    Ok(IdxArray {
        magic,
        dims,
        data: payload.to_vec(),
    })
}

pub fn encode_idx(arr: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * arr.dims.len() + arr.data.len());
    out.extend_from_slice(&arr.magic.to_be_bytes());
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    out
}

/// Reads an IDX file, transparently gunzipping `.gz` content.
pub fn read_idx_file(path: &Path) -> Result<IdxArray> {
    let raw = std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format("IDX file", format!("{}: bad gzip stream: {e}", path.display())))?;
        out
    } else {
        raw
    };
    parse_idx(&bytes)
}

pub fn write_idx_file(path: &Path, arr: &IdxArray) -> Result<()> {
    crate::io::write_atomic(path, &encode_idx(arr))
}

/// Loads an image/label IDX pair with pixels scaled to `[0, 1]`, not normalized.
pub fn load_idx_raw(images_path: &Path, labels_path: &Path, split: Split) -> Result<LabeledDataset> {
    let images = read_idx_file(images_path)?;
    if images.magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            "IDX file",
            format!("{}: magic 0x{:08x} is not a 3-d image file", images_path.display(), images.magic),
        ));
    }
    let labels = read_idx_file(labels_path)?;
    if labels.magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            "IDX file",
            format!("{}: magic 0x{:08x} is not a label file", labels_path.display(), labels.magic),
        ));
    }
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::shape("IDX images vs labels", &images.dims, &labels.dims));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::EmptyDataset);
    }
    let pixels = images.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(Tensor::new(vec![n, 1, h, w], pixels)?, labels, classes, split)
}

/// Loads an IDX pair and normalizes it with its own statistics.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let mut ds = load_idx_raw(images_path, labels_path, Split::Train)?;
    let stats = ds.channel_stats();
    ds.normalize_with(&stats)?;
    Ok(ds)
}

// ---------------------------------------------------------------- synthetic

/// Two unit-variance Gaussian classes in `d` dimensions whose means are 6σ
/// apart along the diagonal. `n` samples, split as evenly as possible.
pub fn synth_gaussians(n: usize, d: usize, seed: u64) -> Result<LabeledDataset> {
    if n < 4 || d == 0 {
        return Err(Error::InvalidParam("need n >= 4 (2 per class) and d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = 3.0 / (d as f64).sqrt();
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * d);
    for &l in &labels {
        let sign = if l == 1 { 1.0 } else { -1.0 };
        for _ in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            data.push(sign * offset + z);
        }
    }
    LabeledDataset::new(Tensor::new(vec![n, d], data)?, labels, 2, Split::Train)
}

/// 8x8 single-channel images holding one horizontal (class 0) or vertical
/// (class 1) bar plus noise.
pub fn synth_bars(n: usize, seed: u64) -> Result<LabeledDataset> {
    synth_bars_sized(n, 8, seed)
}

pub fn synth_bars_sized(n: usize, side: usize, seed: u64) -> Result<LabeledDataset> {
    if n < 4 || side < 2 {
        return Err(Error::InvalidParam("need n >= 4 and side >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * side * side);
    for &l in &labels {
        let pos = rng.gen_range(0..side);
        for y in 0..side {
            for x in 0..side {
                let on = if l == 0 { y == pos } else { x == pos };
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.2;
                data.push(if on { 1.0 } else { 0.0 } + noise);
            }
        }
    }
    LabeledDataset::new(Tensor::new(vec![n, 1, side, side], data)?, labels, 2, Split::Train)
}

/// `n` samples of shape `sample_shape` with standard normal entries.
pub fn random_inputs(n: usize, sample_shape: &[usize], seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![n];
    shape.extend_from_slice(sample_shape);
    let numel: usize = shape.iter().product();
    Tensor::new(shape, (0..numel).map(|_| rng.sample(StandardNormal)).collect())
}

// ---------------------------------------------------------------- batching

/// Index batches for one epoch. Shuffled order depends only on
/// `(seed, epoch)`; the last partial batch is kept.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidParam("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

// ---------------------------------------------------------------- sources

/// Where a train/val pair comes from; serializable so runs can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    Gaussians {
        train: usize,
        val: usize,
        dim: usize,
        seed: u64,
    },
    Bars {
        train: usize,
        val: usize,
        side: usize,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        val_images: PathBuf,
        val_labels: PathBuf,
        train_limit: Option<usize>,
        val_limit: Option<usize>,
        /// Downsample 2x then pad by this many pixels (28x28 -> 16x16 with 1).
        shrink_pad: Option<usize>,
    },
}

impl DatasetSource {
    /// MNIST-style IDX files in `dir` with the standard file names (`.gz`
    /// variants are used when present).
    pub fn mnist_dir(dir: &Path, train_limit: Option<usize>, val_limit: Option<usize>, shrink_pad: Option<usize>) -> Self {
        let pick = |stem: &str| {
            let gz = dir.join(format!("{stem}.gz"));
            if gz.exists() {
                gz
            } else {
                dir.join(stem)
            }
        };
        DatasetSource::Idx {
            train_images: pick("train-images-idx3-ubyte"),
            train_labels: pick("train-labels-idx1-ubyte"),
            val_images: pick("t10k-images-idx3-ubyte"),
            val_labels: pick("t10k-labels-idx1-ubyte"),
            train_limit,
            val_limit,
            shrink_pad,
        }
    }

    /// Loads both splits, normalized with training statistics.
    pub fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let (mut train, mut val) = match self {
            DatasetSource::Gaussians { train, val, dim, seed } => (
                synth_gaussians(*train, *dim, *seed)?,
                synth_gaussians(*val, *dim, seed.wrapping_add(1))?,
            ),
            DatasetSource::Bars { train, val, side, seed } => (
                synth_bars_sized(*train, *side, *seed)?,
                synth_bars_sized(*val, *side, seed.wrapping_add(1))?,
            ),
            DatasetSource::Idx {
                train_images,
                train_labels,
                val_images,
                val_labels,
                train_limit,
                val_limit,
                shrink_pad,
            } => {
                let mut tr = load_idx_raw(train_images, train_labels, Split::Train)?;
                let mut va = load_idx_raw(val_images, val_labels, Split::Val)?;
                if let Some(n) = train_limit {
                    tr = tr.take(*n);
                }
                if let Some(n) = val_limit {
                    va = va.take(*n);
                }
                if let Some(pad) = shrink_pad {
                    tr = tr.downsample2x()?.pad(*pad)?;
                    va = va.downsample2x()?.pad(*pad)?;
                }
                let classes = tr.classes.max(va.classes);
                tr.classes = classes;
                va.classes = classes;
                (tr, va)
            }
        };
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyDataset);
        }
        val.split = Split::Val;
        normalize_splits(&mut train, &mut [&mut val])?;
        Ok((train, val))
    }
}
