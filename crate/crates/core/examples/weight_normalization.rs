//! Limited weight normalization: weights are standardized only inside the
//! quantizer and σ is restored afterwards, so the quantized tensor keeps the
//! scale of the float tensor while the clip value works in σ units.
//!
//! ```text
//! cargo run --example weight_normalization
//! ```

use lcq::lwn::{lwn_quantize, weight_stats};
use lcq::nn::Tensor;
use lcq::quant::{CompandingState, QuantSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> lcq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.02, 0.05).unwrap();
    let w: Vec<f64> = (0..4096).map(|_| normal.sample(&mut rng)).collect();
    let st = weight_stats(&w);
    println!("float weights: mean {:+.5}, std {:.5}", st.mu, st.sigma);

    let w = Tensor::from_vec(&[4096], w)?;
    for bits in [2, 3, 4] {
        let spec = QuantSpec::new(bits, true, Some(8), 8)?;
        let state = CompandingState::<f64>::identity(8, 3.0)?;
        let q = lwn_quantize(&w, &state, &spec)?;
        let qs = weight_stats(q.data());
        let mut levels: Vec<f64> = q.data().to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let mse = w.data().iter().zip(q.data()).map(|(a, b)| (a - st.mu - b).powi(2)).sum::<f64>() / 4096.0;
        println!(
            "{bits}-bit: {} distinct values, std after quantization {:.5}, rms error vs w - mean {:.5}",
            levels.len(),
            qs.sigma,
            mse.sqrt()
        );
    }
    Ok(())
}
