//! MNIST ingestion: IDX parsing, normalization and deterministic batching.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder};
use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const PIXELS: usize = 28 * 28;
pub const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxKind {
    Images,
    Labels,
}

impl IdxKind {
    fn magic(self) -> u32 {
        match self {
            IdxKind::Images => IMAGE_MAGIC,
            IdxKind::Labels => LABEL_MAGIC,
        }
    }

    fn rank(self) -> usize {
        match self {
            IdxKind::Images => 3,
            IdxKind::Labels => 1,
        }
    }
}

/// Raw unsigned-byte IDX payload together with its header dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of bytes per item (product of the trailing dimensions).
    pub fn item_size(&self) -> usize {
        self.dims.iter().skip(1).product()
    }
}

pub fn load_idx(path: impl AsRef<Path>, kind: IdxKind) -> Result<IdxArray> {
    let bytes = fs::read(path)?;
    parse_idx(&bytes, kind)
}

pub fn parse_idx(bytes: &[u8], kind: IdxKind) -> Result<IdxArray> {
    let header_len = 4 + 4 * kind.rank();
    if bytes.len() < 4 {
        return Err(Error::Truncation {
            expected: header_len,
            found: bytes.len(),
        });
    }
    let magic = BigEndian::read_u32(&bytes[..4]);
    if magic != kind.magic() {
        return Err(Error::Format {
            found: magic,
            expected: kind.magic(),
        });
    }
    if bytes.len() < header_len {
        return Err(Error::Truncation {
            expected: header_len,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| BigEndian::read_u32(c) as usize)
        .collect();
    let payload: usize = dims.iter().product();
    let expected = header_len + payload;
    if bytes.len() < expected {
        return Err(Error::Truncation {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header_len..expected].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }

    pub fn expected_len(self) -> usize {
        match self {
            Split::Train => 60_000,
            Split::Test => 10_000,
        }
    }
}

/// Images are kept as raw bytes; normalization to `[0, 1]` happens when a
/// batch or matrix is materialized.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<u8>,
    labels: Vec<u8>,
    width: usize,
    split: Split,
}

impl Dataset {
    pub fn from_raw(images: Vec<u8>, labels: Vec<u8>, width: usize, split: Split) -> Result<Self> {
        if width == 0 || images.len() != labels.len() * width {
            return Err(Error::Shape(format!(
                "{} image bytes do not match {} labels of width {width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| usize::from(l) >= CLASSES) {
            return Err(Error::Format {
                found: u32::from(*bad),
                expected: CLASSES as u32 - 1,
            });
        }
        Ok(Self {
            images,
            labels,
            width,
            split,
        })
    }

    /// Loads one split from a directory holding the four standard MNIST files.
    pub fn load(dir: impl AsRef<Path>, split: Split) -> Result<Self> {
        let (img_name, lbl_name) = split.file_names();
        let dir = dir.as_ref();
        let images = load_idx(dir.join(img_name), IdxKind::Images)?;
        let labels = load_idx(dir.join(lbl_name), IdxKind::Labels)?;
        if images.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let width = images.item_size();
        Self::from_raw(images.data, labels.data, width, split)
    }

    /// First `n` samples (or all of them if `n` exceeds the length).
    pub fn subset(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n * self.width].to_vec(),
            labels: self.labels[..n].to_vec(),
            width: self.width,
            split: self.split,
        }
    }

    /// Copy with every image zero-padded on the right to `width` pixels.
    pub fn padded(&self, width: usize) -> Result<Self> {
        if width < self.width {
            return Err(Error::Shape(format!(
                "cannot pad {}-pixel images to {width}",
                self.width
            )));
        }
        let mut images = Vec::with_capacity(self.len() * width);
        for i in 0..self.len() {
            images.extend_from_slice(self.raw_image(i));
            images.resize(images.len() + width - self.width, 0);
        }
        Ok(Self {
            images,
            labels: self.labels.clone(),
            width,
            split: self.split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn raw_image(&self, idx: usize) -> &[u8] {
        &self.images[idx * self.width..(idx + 1) * self.width]
    }

    /// Normalized pixels of the selected samples, one row per sample.
    pub fn gather<T: Scalar>(&self, indices: &[usize]) -> Array2<T> {
        let lut: Vec<T> = (0..=255u8).map(|v| T::of(f64::from(v) / 255.0)).collect();
        let mut x = Array2::zeros((indices.len(), self.width));
        for (mut row, &idx) in x.rows_mut().into_iter().zip(indices) {
            for (dst, &px) in row.iter_mut().zip(self.raw_image(idx)) {
                *dst = lut[usize::from(px)];
            }
        }
        x
    }

    /// Contiguous, unshuffled slices of the dataset for evaluation.
    pub fn chunks<T: Scalar>(&self, size: usize) -> impl Iterator<Item = (Array2<T>, &[u8])> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |start| {
            let end = (start + size).min(self.len());
            let idx: Vec<usize> = (start..end).collect();
            (self.gather(&idx), &self.labels[start..end])
        })
    }
}

/// One mini-batch: normalized inputs and one-hot targets.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub x: Array2<T>,
    pub t: Array2<T>,
    pub labels: Vec<u8>,
}

pub fn one_hot<T: Scalar>(labels: &[u8]) -> Array2<T> {
    let mut t = Array2::zeros((labels.len(), CLASSES));
    for (i, &l) in labels.iter().enumerate() {
        t[[i, usize::from(l)]] = T::one();
    }
    t
}

/// Sample order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Iterator over the shuffled mini-batches of one epoch. The last batch may
/// be partial.
pub struct Batches<'a, T> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    _elem: std::marker::PhantomData<T>,
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let labels: Vec<u8> = idx.iter().map(|&i| self.ds.labels[i]).collect();
        Some(Batch {
            x: self.ds.gather(idx),
            t: one_hot(&labels),
            labels,
        })
    }
}

pub fn batches<T: Scalar>(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<'_, T>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if batch_size > ds.len() {
        return Err(Error::Config(format!(
            "batch_size {batch_size} exceeds dataset length {}",
            ds.len()
        )));
    }
    Ok(Batches {
        ds,
        order: epoch_permutation(ds.len(), seed, epoch),
        batch_size,
        pos: 0,
        _elem: std::marker::PhantomData,
    })
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(row: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
