//! Quantization levels of a companding quantizer.
//!
//! Starts from the uniform setting (`θ = 0`), then skews the slopes so that
//! more levels land near zero, and shows the outer-lattice re-quantization.
//!
//! ```text
//! cargo run --example quantizer_levels
//! ```

use lcq::quant::{clip_uniform_quantize, lcq_forward, lcq_forward_requant, quant_levels, CompandingState, QuantSpec};

fn show(label: &str, levels: &[f64]) {
    let text: Vec<String> = levels.iter().map(|v| format!("{v:+.4}")).collect();
    println!("{label:<34} {}", text.join(" "));
}

fn main() -> lcq::Result<()> {
    let alpha = 2.0;
    let k = 8;

    let uniform = CompandingState::<f64>::identity(k, alpha)?;
    let unsigned3 = QuantSpec::new(3, false, None, k)?;
    show("theta = 0, unsigned 3-bit", &quant_levels(&uniform, &unsigned3)?);

    // Larger logits on the first intervals give them steeper slopes, so the
    // compressed domain spends more of its uniform grid near zero.
    let theta: Vec<f64> = (0..k).map(|i| 1.2 - 0.3 * i as f64).collect();
    let skewed = CompandingState::<f64>::derive(&theta, alpha)?;
    show("skewed slopes, unsigned 3-bit", &quant_levels(&skewed, &unsigned3)?);

    let signed3 = QuantSpec::new(3, true, None, k)?;
    show("skewed slopes, signed 3-bit", &quant_levels(&skewed, &signed3)?);

    let outer = QuantSpec::new(3, false, Some(6), k)?;
    show("skewed slopes, outer lattice 6-bit", &quant_levels(&skewed, &outer)?);

    println!();
    println!("{:>7} {:>10} {:>10} {:>10}", "x", "uniform", "companded", "lattice");
    for i in 0..=10 {
        let x = -0.2 + 0.24 * i as f64;
        println!(
            "{x:>7.3} {:>10.4} {:>10.4} {:>10.4}",
            clip_uniform_quantize(x, alpha, &unsigned3)?,
            lcq_forward(x, &skewed, &unsigned3)?,
            lcq_forward_requant(x, &skewed, &outer)?
        );
    }

    println!();
    println!("slopes gamma = {:?}", skewed.gamma().iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>());
    Ok(())
}
