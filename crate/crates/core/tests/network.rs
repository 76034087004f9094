use lcq::data::Source;
use lcq::nn::{argmax_rows, Method, Mode, ModelConfig, Network, QuantKind, Tensor};
use lcq::quant::Role;
use lcq::train::{calibrate_alphas, load_datasets, run_training, train_loop, TrainConfig};
use lcq::verify::compare_float_lut;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn synth_config(method: Method) -> TrainConfig {
    TrainConfig {
        dataset: Source::Synth,
        arch: lcq::nn::Arch::Mlp,
        method,
        w_bits: 3,
        a_bits: 3,
        hidden: 32,
        synth_n: 1600,
        synth_test_n: 200,
        batch: 16,
        lr_w: 0.05,
        lr_q: 0.01,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_bit_reproducible() {
    for method in [Method::Lcq, Method::Uniform, Method::LcqNoLwn, Method::Float] {
        let cfg = synth_config(method);
        let (_, a) = run_training(&cfg, None).unwrap();
        let (_, b) = run_training(&cfg, None).unwrap();
        assert!(a.step_losses.len() >= 100);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.step_losses), bits(&b.step_losses), "{method:?}");
        assert_eq!(a.final_top1, b.final_top1);
        let first = a.step_losses[..10].iter().sum::<f64>();
        let last = a.step_losses[a.step_losses.len() - 10..].iter().sum::<f64>();
        assert!(last < first, "{method:?}: loss went from {first} to {last}");
    }
}

/// Relative L2 distance between the logits of an identity-state quantized
/// network (no outer re-quantization, every layer at `bits`) and the float
/// network with the same zero-mean weights. Clip values sit at the observed
/// range, so only rounding separates the two.
fn identity_state_logit_error(bits: u32) -> (f64, usize) {
    let mut q = ModelConfig::toy(Method::Lcq, bits, bits);
    q.outer_bits = None;
    q.edge_bits = bits;
    let mut qnet: Network<f64> = q.build(3).unwrap();
    let mut fnet: Network<f64> = ModelConfig::toy(Method::Float, bits, bits).build(3).unwrap();
    assert!(qnet
        .quantizers()
        .iter()
        .all(|(_, qz)| qz.state().unwrap().is_none_or(|s| s.gamma().iter().all(|v| (v - 1.0).abs() < 1e-12))));
    // Limited weight normalization returns `w − μ` at high precision.
    for net in [&mut qnet, &mut fnet] {
        for c in net.convs_mut() {
            let w = c.weight.value.data_mut();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            w.iter_mut().for_each(|v| *v -= mean);
        }
    }
    let x = random_input(q.input_shape(64), 1);
    calibrate_alphas(&mut qnet, &x, 100.0).unwrap();
    let yq = qnet.forward(&x, Mode::Train).unwrap();
    let yf = fnet.forward(&x, Mode::Train).unwrap();
    let num: f64 = yq.data().iter().zip(yf.data()).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = yf.data().iter().map(|b| b * b).sum();
    let agree = argmax_rows(&yq).iter().zip(argmax_rows(&yf)).filter(|(a, b)| **a == *b).count();
    ((num / den).sqrt(), agree)
}

#[test]
fn identity_state_error_is_rounding_noise() {
    let errs: Vec<(f64, usize)> = [6, 8, 10, 12].into_iter().map(identity_state_logit_error).collect();
    for w in errs.windows(2) {
        let ratio = w[0].0 / w[1].0;
        assert!((3.0..5.5).contains(&ratio), "two extra bits shrank the error by {ratio}: {errs:?}");
    }
    assert!(errs[1].0 < 0.05, "{errs:?}");
    assert_eq!(errs[3].1, 64, "{errs:?}");
}

#[test]
fn zero_theta_matches_the_uniform_baseline_at_step_zero() {
    for outer in [None, Some(8)] {
        for (wb, ab) in [(3, 3), (4, 2), (2, 2)] {
            let mut l = ModelConfig::mnist(Method::Lcq, wb, ab);
            l.outer_bits = outer;
            let u = ModelConfig { method: Method::Uniform, ..l.clone() };
            let mut ln: Network<f64> = l.build(11).unwrap();
            let mut un: Network<f64> = u.build(11).unwrap();
            let x = random_input(l.input_shape(4), 2);
            for mode in [Mode::Train, Mode::Eval] {
                let a = ln.forward(&x, mode).unwrap();
                let b = un.forward(&x, mode).unwrap();
                assert_eq!(a, b, "W{wb}A{ab} outer {outer:?} {mode:?}");
            }
        }
    }
}

#[test]
fn two_bit_weights_stay_uniform() {
    for method in [Method::Lcq, Method::LcqNoLwn] {
        let net: Network<f32> = ModelConfig::mnist(method, 2, 3).build(0).unwrap();
        let kinds: Vec<_> = net
            .quantizers()
            .into_iter()
            .filter(|(_, q)| q.role == Role::Weight)
            .map(|(_, q)| (q.kind, q.spec.bits()))
            .collect();
        assert!(kinds.iter().all(|(k, b)| *b != 2 || *k == QuantKind::Uniform), "{kinds:?}");
        assert!(kinds.iter().any(|(_, b)| *b == 2));
        let act_companding = net
            .quantizers()
            .into_iter()
            .any(|(_, q)| q.role == Role::Activation && q.kind == QuantKind::Companding);
        assert!(act_companding);
    }
}

#[test]
fn table_path_matches_float_path() {
    let mut cfg = synth_config(Method::Lcq);
    cfg.synth_n = 400;
    let (train, test) = load_datasets(&cfg).unwrap();
    let model = cfg.model_config(train.sample_shape(), train.classes);
    let mut net: Network<f32> = model.build(cfg.seed).unwrap();
    train_loop(&mut net, &model, &train, &test, &cfg, None, None).unwrap();
    // The float reference runs at 64 bits.
    let mut ck = lcq::nn::checkpoint::Checkpoint::new(1, "");
    ck.capture(&net);
    let mut n64: Network<f64> = model.build(0).unwrap();
    ck.restore(&mut n64, true).unwrap();
    let r = compare_float_lut(&mut n64, &test, 32).unwrap();
    assert_eq!(r.samples, test.len());
    assert!(r.max_rel_err < 1e-5, "{r:?}");

    let x: Tensor<f32> = test.batch(&(0..16).collect::<Vec<_>>()).unwrap().0;
    let a = net.forward(&x, Mode::Lattice).unwrap();
    let b = net.forward(&x, Mode::Lut).unwrap();
    assert_eq!(a, b);
}
