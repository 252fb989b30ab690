//! Datasets: procedurally generated gratings, IDX files, and seeded batching.

mod idx;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use crate::vit::patchify;

pub use idx::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, read_idx};
pub use synthetic::gen_synthetic;

const SHUFFLE_TAG: u64 = 0x5348_5546;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Synthetic,
    Idx,
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Source::Synthetic),
            "idx" => Ok(Source::Idx),
            _ => Err(Error::Config(format!(
                "unknown data source {s:?} (synthetic | idx)"
            ))),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Synthetic => "synthetic",
            Source::Idx => "idx",
        })
    }
}

/// Where examples come from and how many to use.
///
/// Synthetic images of class `c` out of `K` are oriented sine gratings at
/// angle `c·π/K` with a uniformly random phase, plus a class-dependent
/// brightness offset `class_offset·(c − (K−1)/2)` and Gaussian pixel noise.
/// Example `i` has label `i mod K`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub source: Source,
    pub image_size: usize,
    pub channels: usize,
    pub num_classes: usize,
    /// Grating frequency in cycles per pixel.
    pub frequency: f64,
    pub noise_std: f64,
    pub class_offset: f64,
    pub train_size: usize,
    pub eval_size: usize,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub eval_images: Option<PathBuf>,
    pub eval_labels: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            source: Source::Synthetic,
            image_size: 32,
            channels: 1,
            num_classes: 4,
            frequency: 0.2,
            noise_std: 0.3,
            class_offset: 0.25,
            train_size: 2048,
            eval_size: 512,
            train_images: None,
            train_labels: None,
            eval_images: None,
            eval_labels: None,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.channels == 0 {
            return bad("image_size and channels must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.frequency.is_finite() && self.class_offset.is_finite()) {
            return bad("frequency and class_offset must be finite".into());
        }
        if self.source == Source::Idx
            && (self.train_images.is_none() || self.train_labels.is_none())
        {
            return bad("idx source needs train_images and train_labels".into());
        }
        Ok(())
    }

    /// Train and eval splits. Synthetic eval examples use the indices that
    /// follow the training ones, so the splits never overlap.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        match self.source {
            Source::Synthetic => {
                let train = self.synthetic_range(seed, 0, self.train_size)?;
                let eval = self.synthetic_range(seed, self.train_size, self.eval_size)?;
                Ok((train, eval))
            }
            Source::Idx => {
                let paths = |a: &Option<PathBuf>, b: &Option<PathBuf>| a.clone().zip(b.clone());
                let (ti, tl) =
                    paths(&self.train_images, &self.train_labels).expect("validated above");
                let train = read_idx(ti, tl, self.num_classes)?.truncated(self.train_size);
                let eval = match paths(&self.eval_images, &self.eval_labels) {
                    Some((ei, el)) => read_idx(ei, el, self.num_classes)?.truncated(self.eval_size),
                    None => train.clone(),
                };
                Ok((train, eval))
            }
        }
    }

    fn synthetic_range(&self, seed: u64, start: usize, count: usize) -> Result<Dataset> {
        let (c, s) = (self.channels, self.image_size);
        let mut data = Vec::with_capacity(count * c * s * s);
        let mut labels = Vec::with_capacity(count);
        for i in start..start + count {
            let (img, y) = gen_synthetic(self, seed, i as u64);
            data.extend_from_slice(img.data());
            labels.push(y);
        }
        Dataset::new(
            Tensor::new([count, c, s, s], data)?,
            labels,
            self.num_classes,
        )
    }
}

/// Images `[N, channels, H, W]` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::Validation(format!(
                "images {:?} do not match {} labels",
                images.shape(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Validation(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> Result<Tensor<f32>> {
        self.images.index0(i)
    }

    fn truncated(mut self, max: usize) -> Self {
        if max < self.len() {
            let per = self.images.numel() / self.len().max(1);
            let mut shape = self.images.shape().to_vec();
            shape[0] = max;
            let data = self.images.data()[..max * per].to_vec();
            self.images = Tensor::new(shape, data).expect("prefix of a valid tensor");
            self.labels.truncate(max);
        }
        self
    }

    /// Patchify every image once.
    pub fn to_patches(&self, patch_size: usize) -> Result<PatchSet> {
        let items = (0..self.len())
            .map(|i| patchify(&self.image(i)?, patch_size))
            .collect::<Result<Vec<_>>>()?;
        if items.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(PatchSet {
            patches: Tensor::stack(&items)?,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }
}

/// A dataset in model-input form: `patches: [N, n, pdim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub patches: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Examples at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let per = self.patches.numel() / self.len().max(1);
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::OutOfBounds {
                    op: "gather",
                    axis: 0,
                    start: i,
                    end: i + 1,
                    len: self.len(),
                });
            }
            data.extend_from_slice(&self.patches.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.patches.shape().to_vec();
        shape[0] = indices.len();
        Ok(Batch {
            patches: Tensor::new(shape, data)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[batch, n, pdim]`.
    pub patches: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Positions of the examples in the source set.
    pub indices: Vec<usize>,
}

/// One epoch of shuffled full batches. The order is a pure function of
/// `(seed, epoch)`; the last `len mod batch_size` examples of the permutation
/// are dropped.
pub fn batches(data: &PatchSet, batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<'_>> {
    if batch_size == 0 || batch_size > data.len() {
        return Err(Error::Config(format!(
            "batch size {batch_size} must be in 1..={}",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[SHUFFLE_TAG, epoch]));
    Ok(Batches {
        data,
        order,
        batch_size,
        next: 0,
    })
}

pub struct Batches<'a> {
    data: &'a PatchSet,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Batches<'_> {
    pub fn steps(&self) -> usize {
        self.order.len() / self.batch_size
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let end = self.next + self.batch_size;
        if end > self.order.len() {
            return None;
        }
        let batch = self
            .data
            .gather(&self.order[self.next..end])
            .expect("indices come from the set itself");
        self.next = end;
        Some(batch)
    }
}
