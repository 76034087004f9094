//! Training: configuration, Nesterov SGD with per-group learning rates,
//! warm-up plus cosine schedule, and the epoch loop with metrics and
//! checkpoints.

mod config;
mod optim;

use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{parse_key_values, TrainConfig};
pub use optim::{lr_schedule, sgd_nesterov_step, Sgd, StepRates, ALPHA_FLOOR, VELOCITY_SUFFIX};

use crate::data::{self, Augment, Dataset, Source, Split};
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{softmax_xent, Mode, ModelConfig, Network, ParamGroup, Tensor};
use crate::real::Real;

/// Loads the train and test splits named by `cfg`, normalized and subset.
pub fn load_datasets(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let dir = cfg
        .data_dir
        .clone()
        .unwrap_or_else(|| data::data_root().join(cfg.dataset.as_str()));
    let (mut train, mut test) = match cfg.dataset {
        Source::Mnist => (data::load_mnist(&dir, Split::Train)?, data::load_mnist(&dir, Split::Test)?),
        Source::Cifar10 => (data::load_cifar10(&dir, Split::Train)?, data::load_cifar10(&dir, Split::Test)?),
        Source::Synth => {
            let (n, m, d, k) = (cfg.synth_n, cfg.synth_test_n, cfg.synth_dim, cfg.synth_classes);
            let all = data::synth_classification(n + m, d, k, cfg.seed)?;
            let mut test = Dataset::new(
                Tensor::from_vec(&[m, d, 1, 1], all.images.data()[n * d..].to_vec())?,
                all.labels[n..].to_vec(),
                k,
                Split::Test,
            )?;
            test.split = Split::Test;
            (all.take(n), test)
        }
    };
    let norm = cfg
        .norm
        .clone()
        .unwrap_or_else(|| cfg.dataset.default_normalization(train.sample_shape()[0]));
    train = train.take(cfg.train_subset);
    test = test.take(cfg.test_subset);
    train.normalize(&norm)?;
    test.normalize(&norm)?;
    Ok((train, test))
}

/// Mean loss and top-1 accuracy (in percent) of `net` on `ds`.
pub fn evaluate<T: Real>(net: &mut Network<T>, ds: &Dataset, batch: usize, mode: Mode) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = ds.batch::<T>(chunk)?;
        let out = softmax_xent(&net.forward(&x, mode)?, &y)?;
        loss += out.loss.to_f64_lossy() * chunk.len() as f64;
        correct += out.correct;
    }
    let n = ds.len().max(1) as f64;
    Ok((loss / n, 100.0 * correct as f64 / n))
}

fn percentile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let i = ((p / 100.0) * (v.len() - 1) as f64).round() as usize;
    v[i.min(v.len() - 1)]
}

/// Extension to the fixed initial clip values: sets each clip value to the
/// `p`-th percentile of the magnitudes its quantizer sees on batch `x`
/// (normalized weights for weight quantizers). Batch-norm running
/// statistics are left as they were.
pub fn calibrate_alphas<T: Real>(net: &mut Network<T>, x: &Tensor<T>, p: f64) -> Result<()> {
    let buffers: Vec<Tensor<T>> = net
        .params()
        .iter()
        .filter(|q| q.group == ParamGroup::Buffer)
        .map(|q| q.value.clone())
        .collect();
    net.forward(x, Mode::Train)?;
    for c in net.convs_mut() {
        let input: Option<Vec<f64>> = c
            .cached_input()
            .map(|t| t.data().iter().map(|v| v.abs().to_f64_lossy()).collect());
        if let Some(wq) = &mut c.wq {
            let w = c.weight.value.data();
            let st = wq.stats(w);
            let z: Vec<f64> = w.iter().map(|&v| wq.norm.normalize(v, &st).abs().to_f64_lossy()).collect();
            wq.quantizer.alpha.value = Tensor::scalar(T::lit(percentile(z, p).max(ALPHA_FLOOR)));
        }
        if let (crate::nn::ActOp::Quant(q), Some(inp)) = (&mut c.act, input) {
            q.alpha.value = Tensor::scalar(T::lit(percentile(inp, p).max(ALPHA_FLOOR)));
        }
    }
    let mut it = buffers.into_iter();
    for q in net.params_mut().into_iter().filter(|q| q.group == ParamGroup::Buffer) {
        q.value = it.next().expect("same parameter list");
    }
    // Drop the training caches.
    net.forward(&x.clone(), Mode::Eval)?;
    Ok(())
}

/// One row of the metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub top1: f64,
    pub lr_w: f64,
    pub lr_q: f64,
    /// `(layer, α_w, α_a)`.
    pub alphas: Vec<(String, Option<f64>, Option<f64>)>,
}

pub fn metrics_header(alphas: &[(String, Option<f64>, Option<f64>)]) -> String {
    let mut h = String::from("epoch,split,loss,top1,lr_w,lr_q");
    for (l, _, _) in alphas {
        let _ = write!(h, ",alpha_w_{l},alpha_a_{l}");
    }
    h
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{},{:.6},{:.4},{:.6e},{:.6e}",
            self.epoch,
            self.split.as_str(),
            self.loss,
            self.top1,
            self.lr_w,
            self.lr_q
        );
        let f = |v: Option<f64>| v.map_or_else(String::new, |a| format!("{a:.6}"));
        for (_, w, a) in &self.alphas {
            let _ = write!(r, ",{},{}", f(*w), f(*a));
        }
        r
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    /// Mean training loss of every step, in order.
    pub step_losses: Vec<f64>,
    pub best_top1: f64,
    pub best_epoch: usize,
    pub final_top1: f64,
    pub best_checkpoint: Option<PathBuf>,
}

/// Checkpoint of `net` (plus optimizer state) with the model config in its metadata.
pub fn snapshot<T: Real>(net: &Network<T>, opt: &Sgd<T>, model: &ModelConfig, epoch: usize, extra: &str) -> Checkpoint {
    let mut ck = Checkpoint::new(epoch as u32, format!("model={model}\n{extra}"));
    ck.capture(net);
    opt.save_into(&mut ck);
    ck
}

fn diverged<T: Real>(net: &Network<T>, out: Option<&Path>, what: String) -> Error {
    let mut dump = format!("{what}\n");
    for r in net.quant_records() {
        let _ = writeln!(dump, "{r}");
    }
    if let Some(dir) = out {
        let _ = std::fs::write(dir.join("diverged.txt"), &dump);
    }
    Error::Diverged(dump)
}

/// Where a resumed run starts.
pub struct Resume<'a> {
    pub checkpoint: &'a Checkpoint,
}

/// Runs `cfg.epochs` epochs of training.
///
/// Writes `metrics.csv`, `last.lcqc`, `best.lcqc` and `config.txt` into
/// `out_dir` when given. Aborts with [`Error::Diverged`] (and
/// `diverged.txt`) on a non-finite loss or parameter.
pub fn train_loop<T: Real>(
    net: &mut Network<T>,
    model: &ModelConfig,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    resume: Option<Resume<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Config("training set needs at least two samples".into()));
    }
    let mut opt = Sgd::<T>::new(cfg.momentum, cfg.weight_decay);
    let mut start = 0;
    if let Some(r) = resume {
        r.checkpoint.restore(net, true)?;
        opt.load_from(r.checkpoint, net)?;
        start = r.checkpoint.epoch as usize;
    }
    let steps_per_epoch = train.len().div_ceil(cfg.batch);
    let total = steps_per_epoch * cfg.epochs;
    let warmup = (cfg.warmup_epochs * steps_per_epoch as f64).round() as usize;
    let augment = if cfg.augment { Augment::STANDARD } else { Augment::NONE };

    let mut csv = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            std::fs::write(d.join("config.txt"), cfg.to_text()).map_err(|e| Error::io(d, e))?;
            let path = d.join("metrics.csv");
            let append = start > 0 && path.exists();
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(append)
                .write(true)
                .truncate(!append)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(f);
            if !append {
                writeln!(w, "{}", metrics_header(&net.alpha_summary())).map_err(|e| Error::io(&path, e))?;
            }
            Some((w, path))
        }
        None => None,
    };
    let mut emit = |m: &EpochMetrics| -> Result<()> {
        if let Some((w, path)) = &mut csv {
            writeln!(w, "{}", m.csv_row())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    };

    let mut outcome = TrainOutcome {
        best_top1: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut step = start * steps_per_epoch;
    for epoch in start..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(epoch as u64));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let (mut lr_w, mut lr_q) = (0.0, 0.0);
        for idx in order.chunks(cfg.batch) {
            if idx.len() < 2 {
                continue;
            }
            lr_w = lr_schedule(step, total, warmup, cfg.lr_w, cfg.warmup_floor);
            lr_q = lr_schedule(step, total, warmup, cfg.lr_q, cfg.warmup_floor);
            let (mut x, y) = train.batch::<T>(idx)?;
            augment.apply_batch(&mut x, &mut rng);
            net.zero_grad();
            let logits = net.forward(&x, Mode::Train)?;
            let out = softmax_xent(&logits, &y)?;
            let loss = out.loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(diverged(net, out_dir, format!("epoch {epoch} step {step}: loss {loss}")));
            }
            net.backward(&out.dlogits)?;
            opt.step(net, StepRates { weights: lr_w, quant: lr_q });
            if let Err(e) = net.check_finite() {
                return Err(diverged(net, out_dir, format!("epoch {epoch} step {step}: {e}")));
            }
            outcome.step_losses.push(loss);
            loss_sum += loss * idx.len() as f64;
            correct += out.correct;
            seen += idx.len();
            step += 1;
        }
        let alphas = net.alpha_summary();
        let train_row = EpochMetrics {
            epoch: epoch + 1,
            split: Split::Train,
            loss: loss_sum / seen.max(1) as f64,
            top1: 100.0 * correct as f64 / seen.max(1) as f64,
            lr_w,
            lr_q,
            alphas: alphas.clone(),
        };
        let (tl, ta) = evaluate(net, test, cfg.batch.max(256), Mode::Eval)?;
        let test_row = EpochMetrics {
            split: Split::Test,
            loss: tl,
            top1: ta,
            ..train_row.clone()
        };
        emit(&train_row)?;
        emit(&test_row)?;
        outcome.history.push(train_row);
        outcome.history.push(test_row);
        outcome.final_top1 = ta;
        if let Some(d) = out_dir {
            let ck = snapshot(net, &opt, model, epoch + 1, &format!("test_top1={ta}"));
            ck.save(d.join("last.lcqc"))?;
            if ta > outcome.best_top1 {
                let p = d.join("best.lcqc");
                ck.save(&p)?;
                outcome.best_checkpoint = Some(p);
            }
        }
        if ta > outcome.best_top1 {
            outcome.best_top1 = ta;
            outcome.best_epoch = epoch + 1;
        }
    }
    Ok(outcome)
}

/// Builds the network described by `cfg`, loads `cfg.init` when set, applies
/// optional calibration, and trains. Returns the model config with the outcome.
pub fn run_training(cfg: &TrainConfig, resume: Option<&Path>) -> Result<(ModelConfig, TrainOutcome)> {
    let (train, test) = load_datasets(cfg)?;
    let model = cfg.model_config(train.sample_shape(), train.classes);
    let mut net = model.build::<f32>(cfg.seed)?;
    if let Some(init) = &cfg.init {
        Checkpoint::load(init)?.restore(&mut net, false)?;
    }
    if let Some(p) = cfg.calibrate_alpha {
        let n = train.len().min(cfg.batch.max(256));
        let (x, _) = train.batch::<f32>(&(0..n).collect::<Vec<_>>())?;
        calibrate_alphas(&mut net, &x, p)?;
    }
    let ck = resume.map(Checkpoint::load).transpose()?;
    let outcome = train_loop(
        &mut net,
        &model,
        &train,
        &test,
        cfg,
        cfg.out_dir.as_deref(),
        ck.as_ref().map(|checkpoint| Resume { checkpoint }),
    )?;
    Ok((model, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Method;

    fn synth_cfg(method: Method) -> TrainConfig {
        let mut c = TrainConfig::default();
        for (k, v) in [
            ("dataset", "synth"),
            ("arch", "mlp"),
            ("hidden", "16"),
            ("synth_n", "240"),
            ("synth_test_n", "60"),
            ("synth_dim", "6"),
            ("intervals", "4"),
            ("bits", "3/3"),
            ("batch", "16"),
            ("lr_w", "0.05"),
            ("lr_q", "0.01"),
            ("epochs", "2"),
            ("seed", "4"),
        ] {
            c.set(k, v).unwrap();
        }
        c.method = method;
        c
    }

    #[test]
    fn smoke_training_reduces_loss_and_is_deterministic() {
        let cfg = synth_cfg(Method::Lcq);
        let (_, a) = run_training(&cfg, None).unwrap();
        let (_, b) = run_training(&cfg, None).unwrap();
        assert_eq!(a.step_losses, b.step_losses);
        let k = 5;
        let head: f64 = a.step_losses[..k].iter().sum();
        let tail: f64 = a.step_losses[a.step_losses.len() - k..].iter().sum();
        assert!(tail < head, "{head} → {tail}");
        assert!(a.final_top1 > 80.0, "{}", a.final_top1);
    }

    #[test]
    fn resume_continues_from_the_saved_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_cfg(Method::Uniform);
        cfg.out_dir = Some(dir.path().to_path_buf());
        let (_, full) = run_training(&cfg, None).unwrap();
        assert!(full.best_checkpoint.unwrap().exists());
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(csv.starts_with("epoch,split,loss,top1,lr_w,lr_q,alpha_w_fc1,alpha_a_fc1"));
        assert_eq!(csv.lines().count(), 5);

        let (train, test) = load_datasets(&cfg).unwrap();
        let model = cfg.model_config(train.sample_shape(), train.classes);
        let mut one = cfg.clone();
        one.epochs = 1;
        let out = dir.path().join("one");
        let mut net = model.build::<f32>(cfg.seed).unwrap();
        train_loop(&mut net, &model, &train, &test, &one, Some(&out), None).unwrap();
        let ck = Checkpoint::load(out.join("last.lcqc")).unwrap();
        assert_eq!(ck.epoch, 1);
        assert!(ck.tensors.iter().any(|(n, _)| n.ends_with(VELOCITY_SUFFIX)));

        let mut fresh = model.build::<f32>(99).unwrap();
        let resumed = train_loop(&mut fresh, &model, &train, &test, &cfg, None, Some(Resume { checkpoint: &ck })).unwrap();
        assert_eq!(resumed.history.len(), 2);
        assert_eq!(resumed.history[0].epoch, 2);
    }

    #[test]
    fn divergence_dumps_quantizer_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_cfg(Method::Lcq);
        cfg.lr_w = 1e30;
        cfg.out_dir = Some(dir.path().to_path_buf());
        match run_training(&cfg, None) {
            Err(Error::Diverged(dump)) => assert!(dump.contains("fc2")),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.1.final_top1)),
        }
        assert!(dir.path().join("diverged.txt").exists());
    }

    #[test]
    fn calibration_sets_positive_clip_values() {
        let cfg = synth_cfg(Method::Lcq);
        let (train, _) = load_datasets(&cfg).unwrap();
        let model = cfg.model_config(train.sample_shape(), train.classes);
        let mut net = model.build::<f32>(1).unwrap();
        let before: Vec<f32> = net.params().iter().filter(|p| p.group == ParamGroup::Buffer).flat_map(|p| p.value.data().to_vec()).collect();
        let (x, _) = train.batch::<f32>(&(0..64).collect::<Vec<_>>()).unwrap();
        calibrate_alphas(&mut net, &x, 99.0).unwrap();
        let after: Vec<f32> = net.params().iter().filter(|p| p.group == ParamGroup::Buffer).flat_map(|p| p.value.data().to_vec()).collect();
        assert_eq!(before, after);
        for (_, w, a) in net.alpha_summary() {
            assert!(w.unwrap() > 0.0 && w.unwrap() != 3.0);
            assert!(a.unwrap() > 0.0 && a.unwrap() != 8.0);
        }
    }
}
