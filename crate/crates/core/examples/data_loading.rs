//! Reads MNIST from IDX files (or builds a synthetic IDX pair when the files
//! are absent), normalizes it, and applies the crop-and-flip augmentation.
//!
//! ```text
//! cargo run --example data_loading
//! ```

use lcq::data::{data_root, load_mnist, load_mnist_idx, Augment, IdxArray, Normalization, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = data_root().join("mnist");
    let mut ds = if dir.join("t10k-images-idx3-ubyte").is_file() {
        load_mnist(&dir, Split::Test)?
    } else {
        println!("{} has no MNIST files; writing a synthetic 8-image IDX pair instead", dir.display());
        let tmp = std::env::temp_dir().join("lcq-idx-demo");
        std::fs::create_dir_all(&tmp)?;
        let images = IdxArray {
            dims: vec![8, 28, 28],
            data: (0..8 * 28 * 28).map(|i| (i % 251) as u8).collect(),
        };
        let labels = IdxArray {
            dims: vec![8],
            data: (0..8).collect(),
        };
        let (ip, lp) = (tmp.join("images"), tmp.join("labels"));
        std::fs::write(&ip, images.to_bytes())?;
        std::fs::write(&lp, labels.to_bytes())?;
        load_mnist_idx(&ip, &lp, Split::Test)?
    };
    println!("{} images of shape {:?}, class counts {:?}", ds.len(), ds.sample_shape(), ds.class_counts());
    ds.normalize(&Normalization::mnist())?;
    let (mut x, y) = ds.batch::<f32>(&[0, 1, 2, 3])?;
    let mean = x.data().iter().sum::<f32>() / x.len() as f32;
    println!("normalized batch mean {mean:.4}, labels {y:?}");
    Augment::STANDARD.apply_batch(&mut x, &mut ChaCha8Rng::seed_from_u64(0));
    println!("augmented batch shape {:?}", x.shape());
    Ok(())
}
