//! Integer look-up-table inference for one quantized layer.
//!
//! A 3-bit weight quantizer and a 3-bit activation quantizer, both with an
//! 8-bit outer lattice, turn every product into a table entry. The example
//! prints the table, runs a small convolution through it and compares the
//! result with the float convolution of the quantized tensors.
//!
//! ```text
//! cargo run --example lut_inference
//! ```

use lcq::lut::{build_lut, check_lut_exhaustive, encode, lut_infer_layer, lut_memory_bytes, LatticeLevels};
use lcq::nn::{ConvGeom, Tensor};
use lcq::quant::{trace, CompandingState, QuantSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lcq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 8;
    let ws = QuantSpec::new(3, true, Some(8), k)?;
    let as_ = QuantSpec::new(3, false, Some(8), k)?;
    let theta_w: Vec<f64> = (0..k).map(|i| 0.6 - 0.15 * i as f64).collect();
    let theta_a: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
    let (alpha_w, alpha_a) = (2.5, 4.0);
    let sw = CompandingState::<f64>::derive(&theta_w, alpha_w)?;
    let sa = CompandingState::<f64>::derive(&theta_a, alpha_a)?;
    let wl = LatticeLevels::new(Some(&sw), &ws)?;
    let al = LatticeLevels::new(Some(&sa), &as_)?;
    println!("weight numerators on 1/{}: {:?}", wl.lattice, wl.numerators);
    println!("activation numerators on 1/{}: {:?}", al.lattice, al.numerators);

    let geom = ConvGeom::new(3, 4, 3, 1, 1);
    let wn: usize = geom.weight_shape().iter().product();
    let w = Tensor::from_vec(&geom.weight_shape(), (0..wn).map(|_| rng.random_range(-3.0..3.0)).collect())?;
    let xs = [1, 3, 8, 8];
    let x = Tensor::from_vec(&xs, (0..xs.iter().product()).map(|_| rng.random_range(-0.5..5.0)).collect())?;

    let rescale = alpha_w * alpha_a / (f64::from(wl.lattice) * f64::from(al.lattice));
    let lut = build_lut(&wl, &al, rescale)?;
    println!("\ntable ({} x {}), {:.1} bytes at {}+{} bits per entry:", lut.m_w, lut.m_a, lut.memory_bytes(), lut.ob_w, lut.ob_a);
    for i in 0..lut.m_w {
        let row: Vec<String> = (0..lut.m_a).map(|j| format!("{:>6}", lut.entry(i, j))).collect();
        println!("  {}", row.join(""));
    }
    let pairs = check_lut_exhaustive(&lut, &wl, &al, alpha_w, alpha_a)?;
    println!("{pairs} level pairs checked exactly");
    println!("formula: {:.1} bytes", lut_memory_bytes(3, 3, 8, 8));

    let we = encode(&w, alpha_w, Some(&sw), &ws)?;
    let xe = encode(&x, alpha_a, Some(&sa), &as_)?;
    let y: Tensor<f64> = lut_infer_layer(&we, &xe, &lut, &geom)?;

    // Float reference: quantize, then convolve directly.
    let wq: Vec<f64> = w.data().iter().map(|&v| trace(v, alpha_w, Some(&sw), &ws).out_outer).collect();
    let xq: Vec<f64> = x.data().iter().map(|&v| trace(v, alpha_a, Some(&sa), &as_).out_outer).collect();
    let (h, wd) = (xs[2], xs[3]);
    let mut worst = 0f64;
    for o in 0..geom.cout {
        for r in 0..h {
            for c in 0..wd {
                let mut acc = 0.0;
                for i in 0..geom.cin {
                    for kr in 0..3 {
                        for kc in 0..3 {
                            let (rr, cc) = (r as isize + kr as isize - 1, c as isize + kc as isize - 1);
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= wd as isize {
                                continue;
                            }
                            let wv = wq[((o * geom.cin + i) * 3 + kr) * 3 + kc];
                            acc += wv * xq[(i * h + rr as usize) * wd + cc as usize];
                        }
                    }
                }
                let got = y.data()[(o * h + r) * wd + c];
                worst = worst.max((got - acc).abs() / acc.abs().max(1e-9));
            }
        }
    }
    println!("table path vs float path: max relative difference {worst:.2e}");
    Ok(())
}
