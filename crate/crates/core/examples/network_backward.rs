//! One forward and backward pass through the quantized toy network, then a
//! central-difference check of a few clip-value gradients.
//!
//! ```text
//! cargo run --example network_backward
//! ```

use lcq::nn::{softmax_xent, Method, Mode, ModelConfig, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lcq::Result<()> {
    let model = ModelConfig::toy(Method::Lcq, 3, 3);
    let mut net: Network<f64> = model.build(4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shape = model.input_shape(6);
    let n: usize = shape.iter().product();
    let x = Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let y: Vec<usize> = (0..6).map(|i| i % model.classes).collect();

    net.zero_grad();
    let logits = net.forward(&x, Mode::Train)?;
    let out = softmax_xent(&logits, &y)?;
    net.backward(&out.dlogits)?;
    println!("loss {:.6}, {} trainable values", out.loss, net.num_trainable());
    for p in net.params() {
        let g = p.grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("  {:<18} {:>5} values  |grad| {:.3e}", p.name, p.value.len(), g);
    }

    // The rounding steps make the loss piecewise constant in the clip values,
    // so compare against the smooth surrogate with a frozen forward pass.
    net.freeze(&x, true)?;
    let names: Vec<String> = net
        .params()
        .iter()
        .filter(|p| p.name.ends_with(".alpha"))
        .map(|p| p.name.clone())
        .collect();
    let loss_at = |net: &mut Network<f64>| -> lcq::Result<f64> { Ok(softmax_xent(&net.forward(&x, Mode::Train)?, &y)?.loss) };
    net.zero_grad();
    let out = softmax_xent(&net.forward(&x, Mode::Train)?, &y)?;
    net.backward(&out.dlogits)?;
    for name in names {
        let analytic = net.param(&name).unwrap().grad.data()[0];
        let a0 = net.param(&name).unwrap().value.data()[0];
        let h = 1e-5;
        net.param_mut(&name).unwrap().value.data_mut()[0] = a0 + h;
        let up = loss_at(&mut net)?;
        net.param_mut(&name).unwrap().value.data_mut()[0] = a0 - h;
        let down = loss_at(&mut net)?;
        net.param_mut(&name).unwrap().value.data_mut()[0] = a0;
        println!("  d loss / d {name:<12} analytic {analytic:+.6e}  central difference {:+.6e}", (up - down) / (2.0 * h));
    }
    net.unfreeze();
    Ok(())
}
