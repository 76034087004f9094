//! Float pre-training followed by W2/A2 fine-tuning on MNIST, the same
//! schedule the acceptance suite runs for each seed.
//!
//! Needs the MNIST IDX files in `data/mnist` (see `scripts/fetch_mnist.sh`)
//! or under `$LCQ_DATA_ROOT/mnist`. About four minutes on one core in release
//! mode.
//!
//! ```text
//! cargo run --release --example train_mnist -- runs/mnist 0
//! ```

use std::path::PathBuf;

use lcq::data::{data_root, Source};
use lcq::nn::{Arch, Method};
use lcq::train::{run_training, TrainConfig};

fn main() -> lcq::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/mnist".into()));
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let float = TrainConfig {
        dataset: Source::Mnist,
        data_dir: Some(data_root().join("mnist")),
        arch: Arch::MnistCnn,
        method: Method::Float,
        epochs: 2,
        batch: 64,
        lr_w: 0.05,
        lr_q: 0.0,
        seed,
        out_dir: Some(out.join("float")),
        ..TrainConfig::default()
    };
    let (_, fp) = run_training(&float, None)?;
    println!("float: {:.2}%", fp.final_top1);

    for (name, method, outer) in [
        ("lcq", Method::Lcq, 8),
        ("uniform", Method::Uniform, 8),
        ("lcq-no-lwn", Method::LcqNoLwn, 8),
        ("lcq-outer4", Method::Lcq, 4),
    ] {
        let cfg = TrainConfig {
            method,
            w_bits: 2,
            a_bits: 2,
            outer_bits: Some(outer),
            train_subset: 30_000,
            epochs: 1,
            lr_w: 0.01,
            lr_q: 0.01,
            init: Some(out.join("float/last.lcqc")),
            out_dir: Some(out.join(name)),
            ..float.clone()
        };
        let (_, q) = run_training(&cfg, None)?;
        println!("{name} W2/A2 b'={outer}: {:.2}%", q.final_top1);
    }
    println!("summary table: lcq report {}/*", out.display());
    Ok(())
}
