//! Image datasets: ingestion, seeded splitting, normalisation and batching.

mod augment;
mod baseline;
mod shard;
mod synth;

pub use augment::{augment, crop_at, cutout_at, flip_horizontal, pad, AugmentConfig};
pub use baseline::{baseline_accuracy, BaselineConfig, BaselineModel};
pub use shard::{read_shard, read_shard_dir, write_shard};
pub use synth::{synth_identity_dataset, synth_identity_raw, synth_with, SynthParams};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Unsplit labelled images as they come off disk or out of the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub labels: Vec<usize>,
    /// `len × C×H×W`, record-major.
    pub pixels: Vec<f32>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    fn check(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 || self.n_classes == 0 {
            return Err(Error::Data("dataset has a zero dimension or no classes".into()));
        }
        if self.pixels.len() != self.len() * self.image_len() {
            return Err(Error::Data(format!(
                "{} records need {} pixels, found {}",
                self.len(),
                self.len() * self.image_len(),
                self.pixels.len()
            )));
        }
        if let Some(i) = self.labels.iter().position(|&l| l >= self.n_classes) {
            return Err(Error::Data(format!(
                "record {i}: label {} outside 0..{}",
                self.labels[i], self.n_classes
            )));
        }
        Ok(())
    }
}

/// One partition of a [`SplitDataset`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    /// `len × C×H×W`, normalised.
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    /// Position of each sample in the source dataset.
    pub source_index: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn push(&mut self, image: impl IntoIterator<Item = f64>, label: usize, source: usize) {
        self.images.extend(image);
        self.labels.push(label);
        self.source_index.push(source);
    }

    /// Concatenation of two splits, `self` first.
    pub fn merged(&self, other: &Split) -> Split {
        let mut out = self.clone();
        out.images.extend_from_slice(&other.images);
        out.labels.extend_from_slice(&other.labels);
        out.source_index.extend_from_slice(&other.source_index);
        out
    }
}

/// Relative sizes of train, validation and test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios(pub [u32; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        Self([8, 1, 1])
    }
}

impl SplitRatios {
    /// Train and validation sizes are rounded down; test takes the rest.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        let total: u64 = self.0.iter().map(|&r| r as u64).sum();
        if total == 0 {
            return Err(Error::config("data.ratios", "ratios sum to zero"));
        }
        let part = |r: u32| (n as u64 * r as u64 / total) as usize;
        let (train, val) = (part(self.0[0]), part(self.0[1]));
        Ok([train, val, n - train - val])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub train: Split,
    pub validation: Split,
    pub test: Split,
    pub ratios: SplitRatios,
    /// Per-channel statistics fitted on the training split.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl SplitDataset {
    /// Shuffles with `seed`, splits by `ratios` and normalises every split
    /// with per-channel statistics of the training part.
    pub fn from_raw(raw: &RawDataset, ratios: SplitRatios, seed: u64) -> Result<Self> {
        raw.check()?;
        let [n_train, n_val, _] = ratios.sizes(raw.len())?;
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let (c, hw) = (raw.channels, raw.height * raw.width);
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for &i in &order[..n_train] {
            for (ch, plane) in raw.image(i).chunks_exact(hw).enumerate() {
                for &p in plane {
                    sum[ch] += p as f64;
                }
            }
        }
        let count = (n_train * hw).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        for &i in &order[..n_train] {
            for (ch, plane) in raw.image(i).chunks_exact(hw).enumerate() {
                for &p in plane {
                    sq[ch] += (p as f64 - mean[ch]).powi(2);
                }
            }
        }
        let std: Vec<f64> = sq.iter().map(|s| (s / count).sqrt().max(1e-12)).collect();

        let (mean_ref, std_ref) = (&mean, &std);
        let mut splits = [Split::default(), Split::default(), Split::default()];
        for (pos, &i) in order.iter().enumerate() {
            let which = if pos < n_train {
                0
            } else if pos < n_train + n_val {
                1
            } else {
                2
            };
            let img = raw
                .image(i)
                .chunks_exact(hw)
                .enumerate()
                .flat_map(|(ch, plane)| plane.iter().map(move |&p| (p as f64 - mean_ref[ch]) / std_ref[ch]))
                .collect::<Vec<_>>();
            splits[which].push(img, raw.labels[i], i);
        }
        let [train, validation, test] = splits;
        Ok(Self {
            channels: raw.channels,
            height: raw.height,
            width: raw.width,
            n_classes: raw.n_classes,
            train,
            validation,
            test,
            ratios,
            mean,
            std,
        })
    }

    pub fn load(source: &DataSource, ratios: SplitRatios, seed: u64) -> Result<Self> {
        Self::from_raw(&source.read(seed)?, ratios, seed)
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image<'a>(&self, split: &'a Split, i: usize) -> &'a [f64] {
        let n = self.image_len();
        &split.images[i * n..(i + 1) * n]
    }

    /// Stacks `indices` of `split` into a `B×C×H×W` tensor, augmenting each
    /// image when `aug` is given.
    pub fn batch<R: Rng + ?Sized>(
        &self,
        split: &Split,
        indices: &[usize],
        aug: Option<(&AugmentConfig, &mut R)>,
    ) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let shape = [self.channels, self.height, self.width];
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut aug = aug;
        for &i in indices {
            if i >= split.len() {
                return Err(Error::Contract(format!("sample {i} outside a split of {}", split.len())));
            }
            let img = self.image(split, i);
            match aug.as_mut() {
                Some((cfg, rng)) => data.extend(augment(img, shape, cfg, &mut **rng)?),
                None => data.extend_from_slice(img),
            }
            labels.push(split.labels[i]);
        }
        let out = Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)?;
        Ok((out, labels))
    }
}

/// Where a run's images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default = "default_classes")]
        n_classes: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_image_size")]
        image_size: usize,
    },
    /// Directory of `.shard` files read in name order.
    Shards { dir: PathBuf },
}

fn default_classes() -> usize {
    10
}

fn default_per_class() -> usize {
    200
}

fn default_image_size() -> usize {
    32
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n_classes: default_classes(),
            per_class: default_per_class(),
            image_size: default_image_size(),
        }
    }
}

impl DataSource {
    pub fn read(&self, seed: u64) -> Result<RawDataset> {
        match self {
            DataSource::Synthetic {
                n_classes,
                per_class,
                image_size,
            } => synth_identity_raw(*n_classes, *per_class, *image_size, seed),
            DataSource::Shards { dir } => read_shard_dir(dir),
        }
    }
}
