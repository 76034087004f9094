//! ResNet-20 on CIFAR-10 with the full quantization-aware recipe: 300 epochs,
//! mini-batch 128, initial learning rate 0.04 for the weights and 0.02 for the
//! clip and companding parameters, weight decay 1e-4, cosine decay, random
//! crop and flip. The float checkpoint given as the third argument (if any)
//! initializes the weights.
//!
//! Reference top-1 accuracies for this setting are 91.8% (W2/A2), 92.8%
//! (W3/A3) and 93.2% (W4/A4). A CPU run takes days; the example exists for
//! users with the time or a faster backend.
//!
//! ```text
//! cargo run --release --example resnet20_cifar10 -- 2 runs/resnet20-w2a2 [float.lcqc]
//! ```

use std::path::PathBuf;

use lcq::data::{data_root, Source};
use lcq::nn::{Arch, Method};
use lcq::train::{run_training, TrainConfig};

fn main() -> lcq::Result<()> {
    let mut args = std::env::args().skip(1);
    let bits: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let out = PathBuf::from(args.next().unwrap_or_else(|| format!("runs/resnet20-w{bits}a{bits}")));
    let init = args.next().map(PathBuf::from);
    let cfg = TrainConfig {
        dataset: Source::Cifar10,
        data_dir: Some(data_root().join("cifar10")),
        augment: true,
        arch: Arch::ResNet20,
        method: Method::Lcq,
        w_bits: bits,
        a_bits: bits,
        outer_bits: Some(8),
        intervals: 16,
        epochs: 300,
        batch: 128,
        lr_w: 0.04,
        lr_q: 0.02,
        weight_decay: 1e-4,
        warmup_epochs: 0.0,
        seed: 0,
        init,
        out_dir: Some(out.clone()),
        ..TrainConfig::default()
    };
    let (_, outcome) = run_training(&cfg, None)?;
    println!(
        "W{bits}/A{bits}: final {:.2}%, best {:.2}% (epoch {}); metrics in {}",
        outcome.final_top1,
        outcome.best_top1,
        outcome.best_epoch,
        out.join("metrics.csv").display()
    );
    Ok(())
}
