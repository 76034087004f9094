//! Training configuration and its plain-text file format.
//!
//! Grammar: one `key = value` per line; `#` starts a comment; blank lines are
//! ignored; lists are comma separated; a repeated key overrides the earlier
//! value. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Normalization, Source};
use crate::error::{Error, Result};
use crate::nn::{Arch, Method, ModelConfig};

/// Parses `key = value` lines.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(Error::Config(format!("line {}: bad key {k:?}", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset: Source,
    /// Dataset directory; `None` means `<data root>/<dataset>`.
    pub data_dir: Option<PathBuf>,
    /// Use only the first `n` samples (0 = all).
    pub train_subset: usize,
    pub test_subset: usize,
    pub synth_n: usize,
    pub synth_test_n: usize,
    pub synth_dim: usize,
    pub synth_classes: usize,
    /// Per-channel normalization; `None` means the dataset default.
    pub norm: Option<Normalization>,
    pub augment: bool,

    pub arch: Arch,
    pub method: Method,
    pub w_bits: u32,
    pub a_bits: u32,
    pub outer_bits: Option<u32>,
    pub intervals: usize,
    pub edge_bits: u32,
    pub hidden: usize,
    pub alpha_w: f64,
    pub alpha_a: f64,

    pub epochs: usize,
    pub batch: usize,
    pub lr_w: f64,
    pub lr_q: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    /// Learning rate at step 0 as a fraction of the peak rate.
    pub warmup_floor: f64,
    pub seed: u64,

    /// Checkpoint whose matching tensors initialize the network.
    pub init: Option<PathBuf>,
    /// Extension: when set (0 < p ≤ 100), clip values start at the p-th
    /// percentile of |input| of each quantizer instead of the fixed values.
    pub calibrate_alpha: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: Source::Mnist,
            data_dir: None,
            train_subset: 0,
            test_subset: 0,
            synth_n: 1200,
            synth_test_n: 300,
            synth_dim: 16,
            synth_classes: 3,
            norm: None,
            augment: false,
            arch: Arch::MnistCnn,
            method: Method::Lcq,
            w_bits: 2,
            a_bits: 2,
            outer_bits: Some(8),
            intervals: 16,
            edge_bits: 8,
            hidden: 128,
            alpha_w: 3.0,
            alpha_a: 8.0,
            epochs: 1,
            batch: 64,
            lr_w: 0.01,
            lr_q: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_epochs: 0.0,
            warmup_floor: 0.1,
            seed: 0,
            init: None,
            calibrate_alpha: None,
            out_dir: None,
        }
    }
}

fn num<X: FromStr>(k: &str, v: &str) -> Result<X> {
    v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {k}")))
}

fn list(k: &str, v: &str) -> Result<Vec<f32>> {
    v.split(',').map(|x| num(k, x.trim())).collect()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn bool_val(k: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {v:?} for {k}"))),
    }
}

fn join(v: &[f32]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = opt_path(v),
            "train_subset" => self.train_subset = num(key, v)?,
            "test_subset" => self.test_subset = num(key, v)?,
            "synth_n" => self.synth_n = num(key, v)?,
            "synth_test_n" => self.synth_test_n = num(key, v)?,
            "synth_dim" => self.synth_dim = num(key, v)?,
            "synth_classes" => self.synth_classes = num(key, v)?,
            "norm_mean" => {
                let mean = list(key, v)?;
                let std = self.norm.take().map_or_else(|| vec![1.0; mean.len()], |n| n.std);
                self.norm = Some(Normalization { mean, std });
            }
            "norm_std" => {
                let std = list(key, v)?;
                let mean = self.norm.take().map_or_else(|| vec![0.0; std.len()], |n| n.mean);
                self.norm = Some(Normalization { mean, std });
            }
            "augment" => self.augment = bool_val(key, v)?,
            "arch" => self.arch = v.parse()?,
            "method" => self.method = v.parse()?,
            "bits" => {
                let (w, a) = v
                    .split_once('/')
                    .ok_or_else(|| Error::Config(format!("bits expects W/A, got {v:?}")))?;
                self.w_bits = num(key, w)?;
                self.a_bits = num(key, a)?;
            }
            "w_bits" => self.w_bits = num(key, v)?,
            "a_bits" => self.a_bits = num(key, v)?,
            "outer_bits" => self.outer_bits = if v == "none" { None } else { Some(num(key, v)?) },
            "intervals" => self.intervals = num(key, v)?,
            "edge_bits" => self.edge_bits = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "alpha_w" => self.alpha_w = num(key, v)?,
            "alpha_a" => self.alpha_a = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "lr_w" => self.lr_w = num(key, v)?,
            "lr_q" => self.lr_q = num(key, v)?,
            "momentum" => self.momentum = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "warmup_epochs" => self.warmup_epochs = num(key, v)?,
            "warmup_floor" => self.warmup_floor = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "init" => self.init = opt_path(v),
            "calibrate_alpha" => {
                self.calibrate_alpha = match v {
                    "" | "none" | "off" => None,
                    p => Some(num(key, p)?),
                }
            }
            "out_dir" => self.out_dir = opt_path(v),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch < 2 {
            return bad(format!("batch {} < 2 (batch norm needs two samples)", self.batch));
        }
        if !(self.lr_w >= 0.0 && self.lr_q >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rates and weight decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.warmup_floor) || self.warmup_epochs < 0.0 {
            return bad("warmup_floor must be in [0, 1] and warmup_epochs ≥ 0".into());
        }
        if let Some(p) = self.calibrate_alpha {
            if !(p > 0.0 && p <= 100.0) {
                return bad(format!("calibrate_alpha {p} outside (0, 100]"));
            }
        }
        if let Some(n) = &self.norm {
            if n.mean.len() != n.std.len() || n.std.iter().any(|&s| s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
                return bad("norm_mean and norm_std need equal lengths and positive deviations".into());
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_key_values(text)? {
            c.set(&k, &v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// The configuration in file syntax; `from_text(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = |o: &Option<PathBuf>| o.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string());
        let _ = writeln!(s, "dataset = {}", self.dataset);
        let _ = writeln!(s, "data_dir = {}", p(&self.data_dir));
        let _ = writeln!(s, "train_subset = {}", self.train_subset);
        let _ = writeln!(s, "test_subset = {}", self.test_subset);
        let _ = writeln!(s, "synth_n = {}", self.synth_n);
        let _ = writeln!(s, "synth_test_n = {}", self.synth_test_n);
        let _ = writeln!(s, "synth_dim = {}", self.synth_dim);
        let _ = writeln!(s, "synth_classes = {}", self.synth_classes);
        if let Some(n) = &self.norm {
            let _ = writeln!(s, "norm_mean = {}", join(&n.mean));
            let _ = writeln!(s, "norm_std = {}", join(&n.std));
        }
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "arch = {}", self.arch.as_str());
        let _ = writeln!(s, "method = {}", self.method.as_str());
        let _ = writeln!(s, "w_bits = {}", self.w_bits);
        let _ = writeln!(s, "a_bits = {}", self.a_bits);
        let _ = writeln!(s, "outer_bits = {}", self.outer_bits.map_or_else(|| "none".into(), |b| b.to_string()));
        let _ = writeln!(s, "intervals = {}", self.intervals);
        let _ = writeln!(s, "edge_bits = {}", self.edge_bits);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "alpha_w = {}", self.alpha_w);
        let _ = writeln!(s, "alpha_a = {}", self.alpha_a);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "lr_w = {}", self.lr_w);
        let _ = writeln!(s, "lr_q = {}", self.lr_q);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "warmup_epochs = {}", self.warmup_epochs);
        let _ = writeln!(s, "warmup_floor = {}", self.warmup_floor);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "init = {}", p(&self.init));
        let _ = writeln!(
            s,
            "calibrate_alpha = {}",
            self.calibrate_alpha.map_or_else(|| "none".into(), |v| v.to_string())
        );
        let _ = writeln!(s, "out_dir = {}", p(&self.out_dir));
        s
    }

    /// Network structure for samples of shape `[C, H, W]` and `classes` labels.
    pub fn model_config(&self, sample: [usize; 3], classes: usize) -> ModelConfig {
        let base = match self.arch {
            Arch::MnistCnn => ModelConfig::mnist(self.method, self.w_bits, self.a_bits),
            Arch::Mlp => ModelConfig::mlp(self.method, sample[0], self.hidden, classes, self.w_bits, self.a_bits),
            Arch::Toy => ModelConfig::toy(self.method, self.w_bits, self.a_bits),
            Arch::ResNet20 => ModelConfig::resnet20(self.method, self.w_bits, self.a_bits),
        };
        ModelConfig {
            outer_bits: self.outer_bits,
            intervals: self.intervals,
            edge_bits: self.edge_bits,
            alpha_w: self.alpha_w,
            alpha_a: self.alpha_a,
            in_channels: sample[0],
            height: sample[1],
            width: sample[2],
            classes,
            hidden: if self.arch == Arch::ResNet20 { base.hidden } else { self.hidden },
            ..base
        }
    }
}
