//! Dataset readers, normalization, augmentation and a synthetic generator.
//!
//! Images are held as `f32` tensors `[N, C, H, W]` with pixel values scaled
//! to `[0, 1]` before per-channel normalization.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::real::Real;

/// Environment variable overriding the default data directory (`./data`).
pub const DATA_ROOT_ENV: &str = "LCQ_DATA_ROOT";

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::format("dataset", format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.outer(i)
    }

    /// Gathers the samples `idx` into a batch.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let [c, h, w] = self.sample_shape();
        let mut data = Vec::with_capacity(idx.len() * c * h * w);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::contract(format!("sample {i} of {}", self.len())));
            }
            data.extend(self.image(i).iter().map(|&v| T::lit(f64::from(v))));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec(&[idx.len(), c, h, w], data)?, labels))
    }

    /// The first `n` samples (all of them when `n` is 0 or too large).
    pub fn take(&self, n: usize) -> Self {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        let [c, h, w] = self.sample_shape();
        let images = Tensor::from_vec(&[n, c, h, w], self.images.data()[..n * c * h * w].to_vec()).expect("prefix shape");
        Self {
            images,
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            split: self.split,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// `x ← (x − mean_c)/std_c` per channel.
    pub fn normalize(&mut self, norm: &Normalization) -> Result<()> {
        let [c, h, w] = self.sample_shape();
        if norm.mean.len() != c || norm.std.len() != c {
            return Err(Error::Config(format!("normalization has {} channels, data {c}", norm.mean.len())));
        }
        for img in self.images.data_mut().chunks_mut(c * h * w) {
            for (ch, plane) in img.chunks_mut(h * w).enumerate() {
                for v in plane {
                    *v = (*v - norm.mean[ch]) / norm.std[ch];
                }
            }
        }
        Ok(())
    }
}

/// Per-channel mean and standard deviation of `[0, 1]`-scaled pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn mnist() -> Self {
        Self {
            mean: vec![0.1307],
            std: vec![0.3081],
        }
    }

    pub fn cifar10() -> Self {
        Self {
            mean: vec![0.4914, 0.4822, 0.4465],
            std: vec![0.2470, 0.2435, 0.2616],
        }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

// ---------------------------------------------------------------- IDX ----

/// An IDX array of unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0, 0, 0x08, self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

/// Parses an IDX file of unsigned bytes (type code `0x08`).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let bad = |r: String| Error::format("IDX", r);
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad("bad magic".into()));
    }
    if bytes[2] != 0x08 {
        return Err(bad(format!("element type {:#04x} is not unsigned byte", bytes[2])));
    }
    let ndim = usize::from(bytes[3]);
    let header = 4 + 4 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("size overflow".into()))?;
    if bytes.len() - header != n {
        return Err(bad(format!("expected {n} data bytes, found {}", bytes.len() - header)));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an MNIST-style image/label IDX pair; pixels are scaled to `[0, 1]`.
pub fn load_mnist_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img = parse_idx(&read(images)?)?;
    let lab = parse_idx(&read(labels)?)?;
    if img.dims.len() != 3 || lab.dims.len() != 1 || img.dims[0] != lab.dims[0] {
        return Err(Error::format(
            "IDX",
            format!("image dims {:?} do not match label dims {:?}", img.dims, lab.dims),
        ));
    }
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    let pixels = img.data.iter().map(|&p| f32::from(p) / 255.0).collect();
    let labels = lab.data.iter().map(|&l| usize::from(l)).collect();
    Dataset::new(Tensor::from_vec(&[n, 1, h, w], pixels)?, labels, 10, split)
}

/// MNIST from `dir` using the standard file names.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

// ------------------------------------------------------------- CIFAR ----

pub const CIFAR_RECORD: usize = 3073;

/// Parses CIFAR-10 binary records (`1` label byte + `3·32·32` pixel bytes).
pub fn parse_cifar10(bytes: &[u8], split: Split) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            "CIFAR-10",
            format!("{} bytes is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * 3072);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(usize::from(rec[0]));
        pixels.extend(rec[1..].iter().map(|&p| f32::from(p) / 255.0));
    }
    Dataset::new(Tensor::from_vec(&[n, 3, 32, 32], pixels)?, labels, 10, split)
}

pub fn load_cifar10_bin(path: &Path, split: Split) -> Result<Dataset> {
    parse_cifar10(&read(path)?, split)
}

/// CIFAR-10 from the `cifar-10-batches-bin` directory.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    let mut bytes = Vec::new();
    for f in &files {
        bytes.extend(read(f)?);
    }
    parse_cifar10(&bytes, split)
}

// ------------------------------------------------------ augmentation ----

/// Random crop from a zero-padded image and random horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub pad: usize,
    pub flip: bool,
}

impl Augment {
    pub const STANDARD: Augment = Augment { pad: 4, flip: true };
    pub const NONE: Augment = Augment { pad: 0, flip: false };

    /// Draws a crop offset in `[0, 2·pad]²` and a flip bit.
    pub fn draw(&self, rng: &mut impl Rng) -> (usize, usize, bool) {
        let dy = rng.random_range(0..=2 * self.pad);
        let dx = rng.random_range(0..=2 * self.pad);
        (dy, dx, self.flip && rng.random::<bool>())
    }

    /// Augments every image of the `[N, C, H, W]` batch in place.
    pub fn apply_batch<T: Real>(&self, x: &mut Tensor<T>, rng: &mut impl Rng) {
        if *self == Self::NONE {
            return;
        }
        let s = x.shape().to_vec();
        let (c, h, w) = (s[1], s[2], s[3]);
        for img in x.data_mut().chunks_mut(c * h * w) {
            let (dy, dx, flip) = self.draw(rng);
            let out = crop_flip(img, c, h, w, self.pad, dy, dx, flip);
            img.copy_from_slice(&out);
        }
    }
}

/// Crops `h × w` at offset `(dy, dx)` from the image padded by `pad` zeros,
/// then mirrors horizontally when `flip`.
#[allow(clippy::too_many_arguments)]
pub fn crop_flip<T: Real>(img: &[T], c: usize, h: usize, w: usize, pad: usize, dy: usize, dx: usize, flip: bool) -> Vec<T> {
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx) as isize - pad as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let ox = if flip { w - 1 - x } else { x };
                out[(ch * h + y) * w + ox] = img[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

pub fn hflip<T: Real>(img: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    crop_flip(img, c, h, w, 0, 0, 0, true)
}

// ---------------------------------------------------------- synthetic ----

/// Gaussian blobs: `n` samples of dimension `d` (shape `[n, d, 1, 1]`), unit
/// variance around class centres at distance 8 from the origin along random
/// orthogonal-ish directions. Labels cycle through the classes, then the
/// samples are shuffled.
pub fn synth_classification(n: usize, d: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || d == 0 || n % classes != 0 {
        return Err(Error::contract(format!(
            "synthetic data needs d ≥ 1, ≥ 2 classes and n divisible by classes (n={n}, d={d}, classes={classes})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = synth_centres(d, classes, &mut rng);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * d);
    for &l in &labels {
        for k in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((centres[l][k] + z) as f32);
        }
    }
    Dataset::new(Tensor::from_vec(&[n, d, 1, 1], data)?, labels, classes, Split::Train)
}

/// Class centres used by [`synth_classification`] for the same seed.
pub fn synth_centres(d: usize, classes: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| 8.0 * x / norm).collect()
        })
        .collect()
}

/// Named dataset sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Mnist,
    Cifar10,
    Synth,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Mnist => "mnist",
            Source::Cifar10 => "cifar10",
            Source::Synth => "synth",
        }
    }

    pub fn default_normalization(&self, channels: usize) -> Normalization {
        match self {
            Source::Mnist => Normalization::mnist(),
            Source::Cifar10 => Normalization::cifar10(),
            Source::Synth => Normalization::identity(channels),
        }
    }
}

impl FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Source::Mnist),
            "cifar10" => Ok(Source::Cifar10),
            "synth" => Ok(Source::Synth),
            o => Err(Error::Config(format!("unknown dataset {o:?} (mnist, cifar10, synth)"))),
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip_and_errors() {
        let a = IdxArray {
            dims: vec![1, 2, 3],
            data: vec![0, 1, 2, 3, 4, 255],
        };
        let b = a.to_bytes();
        assert_eq!(parse_idx(&b).unwrap(), a);
        assert!(parse_idx(&b[..b.len() - 1]).is_err());
        let mut m = b.clone();
        m[0] = 1;
        assert!(parse_idx(&m).is_err());
        m = b;
        m[2] = 0x0D;
        assert!(parse_idx(&m).is_err());
    }

    #[test]
    fn cifar_records() {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[0] = 7;
        bytes[CIFAR_RECORD] = 3;
        bytes[1] = 255;
        let d = parse_cifar10(&bytes, Split::Test).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels, vec![7, 3]);
        assert_eq!(d.image(0)[0], 1.0);
        assert!(parse_cifar10(&bytes[..CIFAR_RECORD + 5], Split::Test).is_err());
        bytes[0] = 10;
        assert!(parse_cifar10(&bytes, Split::Test).is_err());
    }

    #[test]
    fn flip_is_an_involution_and_zero_pad_crop_is_identity() {
        let img: Vec<f32> = (0..2 * 3 * 4).map(|v| v as f32).collect();
        assert_eq!(hflip(&hflip(&img, 2, 3, 4), 2, 3, 4), img);
        assert_eq!(crop_flip(&img, 2, 3, 4, 4, 4, 4, false), img);
        let shifted = crop_flip(&img, 2, 3, 4, 1, 0, 0, false);
        assert_eq!(shifted[0], 0.0);
        assert_eq!(shifted[5], img[0]);
    }

    #[test]
    fn synthetic_blobs_are_balanced_and_deterministic() {
        let a = synth_classification(300, 5, 3, 9).unwrap();
        assert_eq!(a, synth_classification(300, 5, 3, 9).unwrap());
        assert_eq!(a.class_counts(), vec![100; 3]);
        assert!(synth_classification(301, 5, 3, 9).is_err());
    }

    #[test]
    fn normalization_per_channel() {
        let t = Tensor::from_vec(&[1, 2, 1, 1], vec![0.5f32, 1.0]).unwrap();
        let mut d = Dataset::new(t, vec![0], 2, Split::Train).unwrap();
        d.normalize(&Normalization {
            mean: vec![0.5, 0.0],
            std: vec![1.0, 2.0],
        })
        .unwrap();
        assert_eq!(d.images.data(), &[0.0, 0.5]);
        assert!(d.normalize(&Normalization::mnist()).is_err());
    }
}
