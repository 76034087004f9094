//! Trains a small MLP on Gaussian blobs with each quantization method and
//! prints the per-epoch metrics. Runs in a few seconds.
//!
//! ```text
//! cargo run --release --example train_synth
//! ```

use lcq::data::Source;
use lcq::nn::{Arch, Method};
use lcq::train::{run_training, TrainConfig};

fn main() -> lcq::Result<()> {
    for method in [Method::Float, Method::Uniform, Method::Lcq, Method::LcqNoLwn] {
        let cfg = TrainConfig {
            dataset: Source::Synth,
            synth_n: 3000,
            synth_test_n: 600,
            synth_dim: 16,
            synth_classes: 6,
            arch: Arch::Mlp,
            hidden: 64,
            method,
            w_bits: 3,
            a_bits: 3,
            epochs: 4,
            batch: 50,
            lr_w: 0.05,
            lr_q: 0.01,
            warmup_epochs: 0.5,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, out) = run_training(&cfg, None)?;
        println!("{} (W{}/A{})", method.as_str(), model.w_bits, model.a_bits);
        for row in out.history.iter().filter(|r| r.split == lcq::data::Split::Test) {
            println!("  epoch {}  loss {:.4}  top-1 {:.2}%", row.epoch, row.loss, row.top1);
        }
    }
    Ok(())
}
